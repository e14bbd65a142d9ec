#pragma once

#include <filesystem>
#include <string>

#include "fathom/model.hpp"

namespace fathom {

struct Checkpoint {
  ModelConfig model;
  ModelParams params;
  std::string run_config;  // JSON text of the run that produced it, may be empty
};

// JSON with every tensor's name, shape and values. Doubles are written with
// round-trip precision, so loading restores parameters bit for bit.
std::string checkpoint_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Throws IoError, or DimensionError naming expected and found shapes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace fathom
