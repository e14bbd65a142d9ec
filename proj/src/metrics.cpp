#include "fathom/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fathom/errors.hpp"

namespace fathom {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void close_checked(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

LabelMetrics label_metrics(const Confusion& c) {
  LabelMetrics m;
  m.counts = c;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.balanced_accuracy = 0.5 * (ratio(c.tp, c.tp + c.fn) + ratio(c.tn, c.tn + c.fp));
  return m;
}

ClassificationReport classification_metrics(const Tensor& predicted, const Tensor& labels, double threshold) {
  if (predicted.shape() != labels.shape() || predicted.shape().rank() != 2) {
    throw DimensionError("classification_metrics: predictions " + predicted.shape().to_string() + " vs labels " +
                         labels.shape().to_string());
  }
  const std::size_t N = labels.dim(0), M = labels.dim(1);
  const auto p = predicted.values();
  const auto y = labels.values();
  ClassificationReport r;
  for (std::size_t m = 0; m < M; ++m) {
    Confusion c;
    for (std::size_t n = 0; n < N; ++n) {
      const double truth = y[n * M + m];
      if (truth != 0.0 && truth != 1.0) throw DataError("classification_metrics: label is not 0 or 1");
      const bool pos = p[n * M + m] >= threshold;
      if (truth == 1.0) {
        pos ? ++c.tp : ++c.fn;
      } else {
        pos ? ++c.fp : ++c.tn;
      }
    }
    r.per_label.push_back(label_metrics(c));
  }
  for (const auto& l : r.per_label) {
    r.precision += l.precision;
    r.recall += l.recall;
    r.f1 += l.f1;
    r.balanced_accuracy += l.balanced_accuracy;
  }
  const double inv = M == 0 ? 0.0 : 1.0 / static_cast<double>(M);
  r.precision *= inv;
  r.recall *= inv;
  r.f1 *= inv;
  r.balanced_accuracy *= inv;
  return r;
}

double smape(const Tensor& predicted, const Tensor& labels) {
  if (predicted.shape() != labels.shape()) {
    throw DimensionError("smape: predictions " + predicted.shape().to_string() + " vs labels " +
                         labels.shape().to_string());
  }
  const auto p = predicted.values();
  const auto y = labels.values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double den = std::abs(p[i]) + std::abs(y[i]);
    if (den > 0.0) total += 2.0 * std::abs(p[i] - y[i]) / den;
  }
  return total / static_cast<double>(p.size());
}

std::vector<AttentionSpike> attention_spikes(const AttentionRecord& r) {
  std::vector<AttentionSpike> out;
  const std::size_t D = r.feature_names.size();
  if (r.sensor_attention.empty() || D == 0) return out;
  const double threshold = 3.0 / static_cast<double>(D);
  for (std::size_t t = 0; t < r.steps; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      const double w = r.sensor_attention[t * D + d];
      if (w > threshold) out.push_back({r.task_id, r.window_index, t, d, w});
    }
  }
  return out;
}

std::vector<std::filesystem::path> export_attention(const std::vector<AttentionRecord>& records,
                                                    const std::filesystem::path& out_dir) {
  if (records.empty()) throw ContractError("export_attention: no records");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir.string());

  std::vector<std::filesystem::path> written;
  std::vector<AttentionSpike> spikes;
  for (const auto& r : records) {
    const std::size_t D = r.feature_names.size(), T = r.steps;
    const bool has_sensor = !r.sensor_attention.empty();
    const bool has_time = !r.time_attention.empty();
    if (has_sensor && r.sensor_attention.size() != T * D) {
      throw DimensionError("export_attention: sensor attention has " + std::to_string(r.sensor_attention.size()) +
                           " entries, expected " + std::to_string(T * D));
    }
    if (has_time && r.time_attention.size() != T) {
      throw DimensionError("export_attention: time attention has " + std::to_string(r.time_attention.size()) +
                           " entries, expected " + std::to_string(T));
    }
    const std::string suffix = "_task" + std::to_string(r.task_id) + "_window" + std::to_string(r.window_index) + ".csv";
    if (has_sensor) {
      const auto path = out_dir / ("sensor_attention" + suffix);
      auto out = open_out(path);
      out << "step";
      for (const auto& name : r.feature_names) out << ',' << name;
      if (has_time) out << ",time_attention";
      out << '\n';
      for (std::size_t t = 0; t < T; ++t) {
        out << t;
        for (std::size_t d = 0; d < D; ++d) out << ',' << fmt(r.sensor_attention[t * D + d]);
        if (has_time) out << ',' << fmt(r.time_attention[t]);
        out << '\n';
      }
      close_checked(out, path);
      written.push_back(path);
      const auto s = attention_spikes(r);
      spikes.insert(spikes.end(), s.begin(), s.end());
    }
    if (has_time) {
      const auto path = out_dir / ("time_attention" + suffix);
      auto out = open_out(path);
      out << "step,time_attention\n";
      for (std::size_t t = 0; t < T; ++t) out << t << ',' << fmt(r.time_attention[t]) << '\n';
      close_checked(out, path);
      written.push_back(path);
    }
  }
  const auto path = out_dir / "spikes.csv";
  auto out = open_out(path);
  out << "task,window,step,feature,weight\n";
  for (const auto& s : spikes) {
    out << s.task_id << ',' << s.window_index << ',' << s.step << ',' << s.feature << ',' << fmt(s.weight) << '\n';
  }
  close_checked(out, path);
  written.push_back(path);
  return written;
}

}  // namespace fathom
