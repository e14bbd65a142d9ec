#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fathom/tensor.hpp"

namespace fathom {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct LabelMetrics {
  Confusion counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double balanced_accuracy = 0.0;
};

struct ClassificationReport {
  std::vector<LabelMetrics> per_label;
  // Unweighted means over labels.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double balanced_accuracy = 0.0;
};

// Rates from counts. A zero denominator gives 0; balanced accuracy averages
// TPR and TNR, counting the rate of an absent class as 0.
LabelMetrics label_metrics(const Confusion& c);

// predicted: probabilities [N x M]; labels: 0/1 [N x M] (DataError otherwise).
ClassificationReport classification_metrics(const Tensor& predicted, const Tensor& labels, double threshold = 0.5);

// Mean over all entries of 2|p - y| / (|p| + |y|); a term with p = y = 0 is 0.
double smape(const Tensor& predicted, const Tensor& labels);

struct AttentionRecord {
  std::size_t task_id = 0;
  std::size_t window_index = 0;
  std::vector<double> sensor_attention;  // T x D, empty when the model has none
  std::vector<double> time_attention;    // T, empty when the model has none
  std::size_t steps = 0;                 // T
  std::vector<std::string> feature_names;
};

struct AttentionSpike {
  std::size_t task_id, window_index, step, feature;
  double weight;
};

// Entries of the sensor attention above 3/D.
std::vector<AttentionSpike> attention_spikes(const AttentionRecord& record);

// Writes sensor_attention_task{k}_window{i}.csv (rows are steps, one column
// per feature plus time_attention when present), or
// time_attention_task{k}_window{i}.csv when there is no sensor attention,
// and spikes.csv. Throws IoError.
std::vector<std::filesystem::path> export_attention(const std::vector<AttentionRecord>& records,
                                                    const std::filesystem::path& out_dir);

}  // namespace fathom
