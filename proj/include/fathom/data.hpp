#pragma once

// Task tables, chronological splits, windowing and the synthetic generator.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fathom/model.hpp"
#include "fathom/tensor.hpp"

namespace fathom {

struct Schema {
  std::string timestamp;
  std::vector<std::string> features;
  std::vector<std::string> labels;
  TaskKind kind = TaskKind::classification;
  // Header columns that are allowed but not used.
  std::vector<std::string> ignore;
  // Tables with fewer rows after cleaning are rejected.
  std::size_t min_rows = 0;
};

Schema parse_schema(const std::string& json_text);
Schema load_schema(const std::filesystem::path& path);

// Rows sorted by timestamp. Missing feature cells are NaN until imputed.
struct Table {
  std::vector<std::string> timestamps;
  std::vector<double> features;  // rows x D
  std::vector<double> labels;    // rows x M
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
  TaskKind kind = TaskKind::classification;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t feature_count() const { return feature_names.size(); }
  std::size_t label_count() const { return label_names.size(); }
  Table slice(std::size_t begin, std::size_t end) const;
};

// RFC-4180 reader. Returns the header followed by the records.
std::vector<std::vector<std::string>> read_csv(const std::string& text);

Table parse_task_csv(const std::string& csv_text, const Schema& schema);
Table load_task_csv(const std::filesystem::path& path, const Schema& schema);

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  void validate() const;
};

struct SplitRows {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t rows = 0;
};
SplitRows split_rows(std::size_t rows, const SplitSpec& spec = {});

// Per-feature statistics of the training rows. Missing cells are skipped;
// a constant column gets std 1.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;
};
Normalizer fit_normalizer(const Table& train);
// Replaces missing feature cells with the normalizer's mean.
void impute(Table& table, const Normalizer& normalizer);
// Imputes, then maps every feature to (x - mean) / std.
void standardize(Table& table, const Normalizer& normalizer);

struct TaskDataset {
  std::size_t task_id = 0;
  std::size_t window = 0;    // T
  std::vector<double> x;     // N x T x D
  std::vector<double> y;     // N x M
  TaskKind kind = TaskKind::classification;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;

  std::size_t size() const { return window == 0 || feature_names.empty() ? 0 : x.size() / (window * feature_names.size()); }
  std::size_t features() const { return feature_names.size(); }
  std::size_t labels() const { return label_names.size(); }
  TaskShape shape() const { return {features(), labels(), kind}; }

  // Gathers the given windows into [n x T x D] and [n x M] tensors.
  Tensor batch_x(std::span<const std::size_t> indices) const;
  Tensor batch_y(std::span<const std::size_t> indices) const;
  Tensor all_x() const;
  Tensor all_y() const;
  TaskDataset subset(std::size_t begin, std::size_t end) const;
};

// Window i covers rows [i*stride, i*stride + T) and takes the label of its
// last row. Throws DataError when rows < T.
TaskDataset make_windows(const Table& table, std::size_t window, std::size_t stride, std::size_t task_id = 0);

struct TaskSplits {
  TaskDataset train, val, test;
  Normalizer normalizer;
};

// Split rows chronologically, fit the normalizer on the training rows,
// standardize all three parts and window each one separately.
TaskSplits prepare_task(const Table& table, std::size_t window, std::size_t stride, std::size_t task_id,
                        const SplitSpec& spec = {});

// Split already-windowed data by window index.
TaskSplits split_windows(const TaskDataset& data, const SplitSpec& spec = {});

// --- synthetic data --------------------------------------------------------------

struct SynthConfig {
  std::size_t tasks = 3;      // K
  std::size_t windows = 600;  // N per task
  std::size_t window = 10;    // T
  std::size_t features = 8;   // D, at least 4
  std::size_t labels = 2;     // M
  std::uint64_t seed = 1;
  TaskKind kind = TaskKind::classification;
  double noise = 0.1;          // added to the score before labelling
  double marker = 0.4;         // mean shift of informative features inside the pulse
  double pulse_fraction = 0.25;
  double absent_fraction = 0.1;  // windows without a pulse

  void validate() const;
};

struct SynthTaskTruth {
  std::vector<std::size_t> informative;       // sorted feature indices
  std::vector<std::vector<double>> weights;   // [M][|informative|], entries +-1
  std::vector<double> thresholds;             // per label, classification only
};

struct SynthManifest {
  SynthConfig config;
  std::size_t pulse_length = 0;
  std::vector<long> phases;  // per window, -1 when absent
  std::vector<SynthTaskTruth> tasks;
};

struct SynthData {
  std::vector<TaskDataset> tasks;
  SynthManifest manifest;
};

// Every window is drawn independently. A square pulse of length
// ceil(T * pulse_fraction) sits at the same phase in every task's window i.
// Task k has ceil(D/4) informative features; during the pulse they are
// shifted by `marker`. The score of label m is the sum over pulse steps and
// informative features of w[m][j] * x, divided by sqrt(pulse length *
// informative count) so that it has roughly unit scale. Classification labels are
// score + noise above the per-label median (windows without a pulse rank
// below every pulse window); regression labels are score + noise.
SynthData synth_generate(const SynthConfig& config);

std::string manifest_to_json(const SynthManifest& manifest);
SynthManifest manifest_from_json(const std::string& json_text);

}  // namespace fathom
