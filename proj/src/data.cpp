#include "fathom/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "fathom/errors.hpp"
#include "json.hpp"

namespace fathom {

using nlohmann::json;

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

bool is_missing(const std::string& cell) {
  if (cell.empty()) return true;
  std::string lower;
  for (char c : cell) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "na" || lower == "nan" || lower == "null";
}

bool parse_number(const std::string& cell, double& out) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

double cell_value(const std::string& raw, const std::string& column, std::size_t line) {
  const auto cell = trim(raw);
  if (is_missing(cell)) return kMissing;
  double v = 0.0;
  if (!parse_number(cell, v)) {
    throw DataError("row " + std::to_string(line) + ", column '" + column + "': not a number: '" + cell + "'");
  }
  return v;
}

std::vector<double> normal_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

// --- schema ------------------------------------------------------------------------

Schema parse_schema(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema is not valid JSON: ") + e.what());
  }
  Schema s;
  try {
    if (!j.contains("timestamp")) throw SchemaError("schema: missing field 'timestamp'");
    if (!j.contains("features")) throw SchemaError("schema: missing field 'features'");
    if (!j.contains("labels")) throw SchemaError("schema: missing field 'labels'");
    s.timestamp = j.at("timestamp").get<std::string>();
    s.features = j.at("features").get<std::vector<std::string>>();
    s.labels = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("kind")) s.kind = parse_task_kind(j.at("kind").get<std::string>());
    if (j.contains("ignore")) s.ignore = j.at("ignore").get<std::vector<std::string>>();
    if (j.contains("min_rows")) s.min_rows = j.at("min_rows").get<std::size_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  } catch (const ContractError& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
  if (s.features.empty()) throw SchemaError("schema: 'features' is empty");
  if (s.labels.empty()) throw SchemaError("schema: 'labels' is empty");
  return s;
}

Schema load_schema(const std::filesystem::path& path) { return parse_schema(read_file(path)); }

// --- csv ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t i = 0;
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // Skip blank lines.
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw DataError("csv: unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

Table Table::slice(std::size_t begin, std::size_t end) const {
  Table t;
  t.feature_names = feature_names;
  t.label_names = label_names;
  t.kind = kind;
  const std::size_t D = feature_count(), M = label_count();
  t.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  t.features.assign(features.begin() + begin * D, features.begin() + end * D);
  t.labels.assign(labels.begin() + begin * M, labels.begin() + end * M);
  return t;
}

Table parse_task_csv(const std::string& csv_text, const Schema& schema) {
  const auto records = read_csv(csv_text);
  if (records.empty()) throw DataError("empty dataset: no header row");
  const auto& header = records.front();

  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    if (!column.emplace(name, c).second) throw SchemaError("duplicate column '" + name + "'");
  }
  std::set<std::string> known(schema.features.begin(), schema.features.end());
  known.insert(schema.labels.begin(), schema.labels.end());
  known.insert(schema.timestamp);
  known.insert(schema.ignore.begin(), schema.ignore.end());
  for (const auto& [name, c] : column) {
    if (!known.count(name)) throw SchemaError("unknown column '" + name + "' is not in the schema");
  }
  auto index_of = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw SchemaError("column '" + name + "' named by the schema is missing from the file");
    return it->second;
  };
  const std::size_t ts_col = index_of(schema.timestamp);
  std::vector<std::size_t> f_cols, l_cols;
  for (const auto& f : schema.features) f_cols.push_back(index_of(f));
  for (const auto& l : schema.labels) l_cols.push_back(index_of(l));

  if (records.size() == 1) throw DataError("empty dataset: file has a header but no rows");

  struct Row {
    std::string ts;
    double key;
    std::vector<double> f, l;
  };
  std::vector<Row> rows;
  bool numeric_ts = true;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw DataError("row " + std::to_string(r) + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(rec.size()));
    }
    Row row;
    row.ts = trim(rec[ts_col]);
    if (row.ts.empty()) throw DataError("row " + std::to_string(r) + ": empty timestamp");
    if (!parse_number(row.ts, row.key)) numeric_ts = false;
    bool label_missing = false;
    for (std::size_t m = 0; m < l_cols.size(); ++m) {
      const double v = cell_value(rec[l_cols[m]], schema.labels[m], r);
      if (std::isnan(v)) label_missing = true;
      if (schema.kind == TaskKind::classification && !std::isnan(v) && v != 0.0 && v != 1.0) {
        throw DataError("row " + std::to_string(r) + ", label '" + schema.labels[m] + "' is not 0 or 1");
      }
      row.l.push_back(v);
    }
    if (label_missing) continue;
    for (std::size_t d = 0; d < f_cols.size(); ++d) row.f.push_back(cell_value(rec[f_cols[d]], schema.features[d], r));
    rows.push_back(std::move(row));
  }

  if (numeric_ts) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.key < b.key; });
  } else {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
  }
  std::vector<std::string> duplicates;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const bool same = numeric_ts ? rows[r].key == rows[r - 1].key : rows[r].ts == rows[r - 1].ts;
    if (same && (duplicates.empty() || duplicates.back() != rows[r].ts)) duplicates.push_back(rows[r].ts);
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate timestamps:";
    for (const auto& d : duplicates) msg += " " + d;
    throw DataError(msg);
  }
  if (rows.empty()) throw DataError("empty dataset: every row has a missing label");
  if (rows.size() < schema.min_rows) {
    throw DataError("dataset has " + std::to_string(rows.size()) + " rows, fewer than min_rows " +
                    std::to_string(schema.min_rows));
  }

  Table t;
  t.feature_names = schema.features;
  t.label_names = schema.labels;
  t.kind = schema.kind;
  for (auto& row : rows) {
    t.timestamps.push_back(row.ts);
    t.features.insert(t.features.end(), row.f.begin(), row.f.end());
    t.labels.insert(t.labels.end(), row.l.begin(), row.l.end());
  }
  return t;
}

Table load_task_csv(const std::filesystem::path& path, const Schema& schema) {
  return parse_task_csv(read_file(path), schema);
}

// --- splits and normalization --------------------------------------------------------

void SplitSpec::validate() const {
  if (!(train > 0 && val > 0 && test > 0)) throw ConfigError("split: fractions must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
}

SplitRows split_rows(std::size_t rows, const SplitSpec& spec) {
  spec.validate();
  SplitRows s;
  s.rows = rows;
  s.train_end = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(rows)));
  s.val_end = static_cast<std::size_t>(std::llround((spec.train + spec.val) * static_cast<double>(rows)));
  s.train_end = std::min(s.train_end, rows);
  s.val_end = std::min(std::max(s.val_end, s.train_end), rows);
  return s;
}

Normalizer fit_normalizer(const Table& train) {
  const std::size_t D = train.feature_count(), R = train.rows();
  Normalizer n;
  n.mean.assign(D, 0.0);
  n.std.assign(D, 1.0);
  for (std::size_t d = 0; d < D; ++d) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const double v = train.features[r * D + d];
      if (!std::isnan(v)) {
        total += v;
        ++count;
      }
    }
    if (count == 0) continue;
    const double mean = total / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const double v = train.features[r * D + d];
      if (!std::isnan(v)) sq += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(count));
    n.mean[d] = mean;
    n.std[d] = sd > 0.0 ? sd : 1.0;
  }
  return n;
}

void impute(Table& table, const Normalizer& n) {
  const std::size_t D = table.feature_count();
  if (n.mean.size() != D) throw DimensionError("impute: normalizer has " + std::to_string(n.mean.size()) +
                                               " features, table has " + std::to_string(D));
  for (std::size_t i = 0; i < table.features.size(); ++i) {
    if (std::isnan(table.features[i])) table.features[i] = n.mean[i % D];
  }
}

void standardize(Table& table, const Normalizer& n) {
  impute(table, n);
  const std::size_t D = table.feature_count();
  for (std::size_t i = 0; i < table.features.size(); ++i) {
    const std::size_t d = i % D;
    table.features[i] = (table.features[i] - n.mean[d]) / n.std[d];
  }
}

// --- windows -------------------------------------------------------------------------

Tensor TaskDataset::batch_x(std::span<const std::size_t> indices) const {
  const std::size_t step = window * features();
  std::vector<double> v;
  v.reserve(indices.size() * step);
  for (std::size_t i : indices) v.insert(v.end(), x.begin() + i * step, x.begin() + (i + 1) * step);
  return Tensor(Shape{indices.size(), window, features()}, std::move(v));
}

Tensor TaskDataset::batch_y(std::span<const std::size_t> indices) const {
  const std::size_t M = labels();
  std::vector<double> v;
  v.reserve(indices.size() * M);
  for (std::size_t i : indices) v.insert(v.end(), y.begin() + i * M, y.begin() + (i + 1) * M);
  return Tensor(Shape{indices.size(), M}, std::move(v));
}

Tensor TaskDataset::all_x() const { return Tensor(Shape{size(), window, features()}, x); }
Tensor TaskDataset::all_y() const { return Tensor(Shape{size(), labels()}, y); }

TaskDataset TaskDataset::subset(std::size_t begin, std::size_t end) const {
  TaskDataset d = *this;
  const std::size_t step = window * features(), M = labels();
  d.x.assign(x.begin() + begin * step, x.begin() + end * step);
  d.y.assign(y.begin() + begin * M, y.begin() + end * M);
  return d;
}

TaskDataset make_windows(const Table& table, std::size_t window, std::size_t stride, std::size_t task_id) {
  if (window == 0) throw ConfigError("window must be at least 1");
  if (stride == 0) throw ConfigError("stride must be at least 1");
  const std::size_t R = table.rows(), D = table.feature_count(), M = table.label_count();
  if (R < window) {
    throw DataError("insufficient data: " + std::to_string(R) + " rows for a window of " + std::to_string(window));
  }
  TaskDataset d;
  d.task_id = task_id;
  d.window = window;
  d.kind = table.kind;
  d.feature_names = table.feature_names;
  d.label_names = table.label_names;
  for (std::size_t start = 0; start + window <= R; start += stride) {
    d.x.insert(d.x.end(), table.features.begin() + start * D, table.features.begin() + (start + window) * D);
    const std::size_t last = start + window - 1;
    d.y.insert(d.y.end(), table.labels.begin() + last * M, table.labels.begin() + (last + 1) * M);
  }
  return d;
}

TaskSplits prepare_task(const Table& table, std::size_t window, std::size_t stride, std::size_t task_id,
                        const SplitSpec& spec) {
  const auto s = split_rows(table.rows(), spec);
  Table train = table.slice(0, s.train_end);
  Table val = table.slice(s.train_end, s.val_end);
  Table test = table.slice(s.val_end, s.rows);
  TaskSplits out;
  out.normalizer = fit_normalizer(train);
  for (Table* t : {&train, &val, &test}) standardize(*t, out.normalizer);
  auto windows = [&](const Table& t, const char* name) {
    if (t.rows() < window) {
      throw DataError(std::string("insufficient data: ") + name + " split of task " + std::to_string(task_id) +
                      " has " + std::to_string(t.rows()) + " rows for a window of " + std::to_string(window));
    }
    return make_windows(t, window, stride, task_id);
  };
  out.train = windows(train, "train");
  out.val = windows(val, "val");
  out.test = windows(test, "test");
  return out;
}

TaskSplits split_windows(const TaskDataset& data, const SplitSpec& spec) {
  const auto s = split_rows(data.size(), spec);
  TaskSplits out;
  out.train = data.subset(0, s.train_end);
  out.val = data.subset(s.train_end, s.val_end);
  out.test = data.subset(s.val_end, s.rows);
  return out;
}

// --- synthetic data ------------------------------------------------------------------

void SynthConfig::validate() const {
  if (tasks == 0) throw ConfigError("synth.tasks must be at least 1");
  if (windows < 10) throw ConfigError("synth.windows must be at least 10");
  if (window == 0) throw ConfigError("synth.window must be at least 1");
  if (features < 4) throw ConfigError("synth.features must be at least 4");
  if (labels == 0) throw ConfigError("synth.labels must be at least 1");
  if (noise < 0) throw ConfigError("synth.noise must be non-negative");
  if (!(pulse_fraction > 0 && pulse_fraction <= 1)) throw ConfigError("synth.pulse_fraction must be in (0, 1]");
  if (!(absent_fraction >= 0 && absent_fraction < 0.5)) throw ConfigError("synth.absent_fraction must be in [0, 0.5)");
}

SynthData synth_generate(const SynthConfig& c) {
  c.validate();
  const std::size_t K = c.tasks, N = c.windows, T = c.window, D = c.features, M = c.labels;
  const std::size_t L = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(T * c.pulse_fraction - 1e-9)));
  const std::size_t I = (D + 3) / 4;

  SynthData out;
  out.manifest.config = c;
  out.manifest.pulse_length = L;

  // Phases shared by every task.
  {
    std::mt19937_64 rng(derive_seed(c.seed, 100, 0));
    const auto absent = static_cast<std::size_t>(std::llround(c.absent_fraction * static_cast<double>(N)));
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_absent(N, false);
    for (std::size_t i = 0; i < absent; ++i) is_absent[order[i]] = true;
    std::uniform_int_distribution<long> phase(0, static_cast<long>(T - L));
    out.manifest.phases.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      const long p = phase(rng);
      out.manifest.phases[i] = is_absent[i] ? -1 : p;
    }
  }

  for (std::size_t k = 0; k < K; ++k) {
    std::mt19937_64 rng(derive_seed(c.seed, 101, k));
    SynthTaskTruth truth;
    std::vector<std::size_t> all(D);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    truth.informative.assign(all.begin(), all.begin() + static_cast<long>(I));
    std::sort(truth.informative.begin(), truth.informative.end());
    std::bernoulli_distribution coin(0.5);
    truth.weights.assign(M, std::vector<double>(I));
    for (auto& row : truth.weights)
      for (auto& w : row) w = coin(rng) ? 1.0 : -1.0;

    TaskDataset d;
    d.task_id = k;
    d.window = T;
    d.kind = c.kind;
    for (std::size_t f = 0; f < D; ++f) d.feature_names.push_back("f" + std::to_string(f));
    for (std::size_t m = 0; m < M; ++m) d.label_names.push_back("y" + std::to_string(m));
    d.x = normal_vector(N * T * D, rng);
    const auto label_noise = normal_vector(N * M, rng);

    std::vector<double> scores(N * M, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      const long p = out.manifest.phases[n];
      if (p < 0) continue;
      for (std::size_t t = static_cast<std::size_t>(p); t < static_cast<std::size_t>(p) + L; ++t) {
        for (std::size_t j = 0; j < I; ++j) {
          double& v = d.x[(n * T + t) * D + truth.informative[j]];
          v += c.marker;
          for (std::size_t m = 0; m < M; ++m) scores[n * M + m] += truth.weights[m][j] * v;
        }
      }
    }
    // Unit variance for a pulse window with noise-free features.
    const double norm = 1.0 / std::sqrt(static_cast<double>(L * I));
    for (auto& v : scores) v *= norm;
    d.y.assign(N * M, 0.0);
    if (c.kind == TaskKind::regression) {
      for (std::size_t i = 0; i < N * M; ++i) d.y[i] = scores[i] + c.noise * label_noise[i];
    } else {
      truth.thresholds.resize(M);
      for (std::size_t m = 0; m < M; ++m) {
        std::vector<double> key(N);
        for (std::size_t n = 0; n < N; ++n) {
          key[n] = out.manifest.phases[n] < 0 ? -std::numeric_limits<double>::infinity()
                                              : scores[n * M + m] + c.noise * label_noise[n * M + m];
        }
        std::vector<double> sorted = key;
        std::sort(sorted.begin(), sorted.end());
        const double theta = N % 2 == 1 ? sorted[N / 2] : 0.5 * (sorted[N / 2 - 1] + sorted[N / 2]);
        truth.thresholds[m] = theta;
        for (std::size_t n = 0; n < N; ++n) d.y[n * M + m] = key[n] > theta ? 1.0 : 0.0;
      }
    }
    out.tasks.push_back(std::move(d));
    out.manifest.tasks.push_back(std::move(truth));
  }
  return out;
}

std::string manifest_to_json(const SynthManifest& m) {
  const auto& c = m.config;
  json j;
  j["seed"] = c.seed;
  j["tasks"] = c.tasks;
  j["windows"] = c.windows;
  j["window"] = c.window;
  j["features"] = c.features;
  j["labels"] = c.labels;
  j["kind"] = std::string(to_string(c.kind));
  j["noise"] = c.noise;
  j["marker"] = c.marker;
  j["pulse_fraction"] = c.pulse_fraction;
  j["absent_fraction"] = c.absent_fraction;
  j["pulse_length"] = m.pulse_length;
  j["phases"] = m.phases;
  json tasks = json::array();
  for (const auto& t : m.tasks) {
    json jt;
    jt["informative"] = t.informative;
    jt["weights"] = t.weights;
    jt["thresholds"] = t.thresholds;
    tasks.push_back(jt);
  }
  j["truth"] = tasks;
  return j.dump(2) + "\n";
}

SynthManifest manifest_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SynthManifest m;
    auto& c = m.config;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.tasks = j.at("tasks").get<std::size_t>();
    c.windows = j.at("windows").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.features = j.at("features").get<std::size_t>();
    c.labels = j.at("labels").get<std::size_t>();
    c.kind = parse_task_kind(j.at("kind").get<std::string>());
    c.noise = j.at("noise").get<double>();
    c.marker = j.at("marker").get<double>();
    c.pulse_fraction = j.at("pulse_fraction").get<double>();
    c.absent_fraction = j.at("absent_fraction").get<double>();
    m.pulse_length = j.at("pulse_length").get<std::size_t>();
    m.phases = j.at("phases").get<std::vector<long>>();
    for (const auto& jt : j.at("truth")) {
      SynthTaskTruth t;
      t.informative = jt.at("informative").get<std::vector<std::size_t>>();
      t.weights = jt.at("weights").get<std::vector<std::vector<double>>>();
      t.thresholds = jt.at("thresholds").get<std::vector<double>>();
      m.tasks.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

}  // namespace fathom
