#pragma once

// Run configuration: one JSON file fully describes a run.
//
//   {
//     "dataset_dir": "data/extrasensory",    // schema.json + one CSV per task
//     "synth": { "tasks": 3, ... },          // instead of dataset_dir
//     "variant": "FATHOM",
//     "window": 30, "stride": 1,
//     "hidden": 64, "head_width": 64, "batch": 60, "lr": 0.001,
//     "patience": 20, "dropout": 0.25, "recurrent_dropout": 0.25,
//     "l2": 0.0001, "max_epochs": 100, "seed": 1, "output_dir": "runs/fathom"
//   }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fathom/data.hpp"
#include "fathom/federated.hpp"
#include "fathom/model.hpp"

namespace fathom {

struct RunConfig {
  std::optional<std::string> dataset_dir;
  std::optional<SynthConfig> synth;
  ModelVariant variant = ModelVariant::fathom;
  std::size_t window = 30;
  std::size_t stride = 1;
  std::size_t hidden = 64;
  std::size_t head_width = 64;
  std::size_t batch = 60;
  double lr = 0.001;
  std::size_t patience = 20;
  double dropout = 0.25;
  double recurrent_dropout = 0.25;
  double l2 = 1e-4;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  std::string output_dir = "fathom_run";
  SplitSpec split;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Unknown keys and wrongly typed values are ConfigErrors.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Every field, including defaults, so the echo alone reproduces the run.
std::string run_config_json(const RunConfig& config);

struct RunData {
  ModelConfig model;
  std::vector<TaskSplits> tasks;
  std::optional<SynthManifest> manifest;
};

// Generates or loads, splits and windows the data; the model config takes
// its task shapes from the data.
RunData load_run_data(const RunConfig& config);
TrainConfig train_config(const RunConfig& config, std::size_t workers = 0);

}  // namespace fathom
