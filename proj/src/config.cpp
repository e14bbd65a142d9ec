#include "fathom/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "fathom/errors.hpp"
#include "json.hpp"

namespace fathom {

using ojson = nlohmann::ordered_json;

namespace {

const std::set<std::string> kRunKeys = {"dataset_dir", "synth",   "variant",           "window", "stride",
                                        "hidden",      "head_width", "batch",          "lr",     "patience",
                                        "dropout",     "recurrent_dropout", "l2",      "max_epochs", "seed",
                                        "output_dir",  "split"};
const std::set<std::string> kSynthKeys = {"tasks", "windows", "window", "features", "labels", "seed",
                                          "kind",  "noise",   "marker", "pulse_fraction", "absent_fraction"};
const std::set<std::string> kSplitKeys = {"train", "val", "test"};

void check_keys(const ojson& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + (where.empty() ? "" : ".") + key + ": unknown field");
  }
}

template <typename T>
void read(const ojson& j, const char* key, T& out, const std::string& prefix = "") {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const std::string field = prefix + key;
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(field + ": expected a string");
    out = v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(field + ": expected a number");
    out = v.get<double>();
  } else {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      throw ConfigError(field + ": expected a non-negative integer");
    }
    out = v.get<T>();
  }
}

void positive(std::size_t v, const char* field) {
  if (v == 0) throw ConfigError(std::string(field) + ": must be positive");
}

void positive(double v, const char* field) {
  if (!(v > 0)) throw ConfigError(std::string(field) + ": must be positive");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void RunConfig::validate() const {
  if (!dataset_dir && !synth) throw ConfigError("dataset_dir: missing (give a dataset_dir or a synth block)");
  if (dataset_dir && synth) throw ConfigError("dataset_dir: give either a dataset_dir or a synth block, not both");
  positive(window, "window");
  positive(stride, "stride");
  positive(hidden, "hidden");
  positive(head_width, "head_width");
  positive(batch, "batch");
  positive(lr, "lr");
  positive(max_epochs, "max_epochs");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout: must be in [0, 1)");
  if (!(recurrent_dropout >= 0 && recurrent_dropout < 1)) throw ConfigError("recurrent_dropout: must be in [0, 1)");
  if (!(l2 >= 0)) throw ConfigError("l2: must be non-negative");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  split.validate();
  if (synth) {
    synth->validate();
    if (synth->window != window) {
      throw ConfigError("window: " + std::to_string(window) + " differs from synth.window " +
                        std::to_string(synth->window));
    }
  }
}

RunConfig parse_run_config(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, kRunKeys, "");
  RunConfig c;
  if (j.contains("dataset_dir")) {
    std::string dir;
    read(j, "dataset_dir", dir);
    c.dataset_dir = dir;
  }
  if (j.contains("variant")) {
    std::string name;
    read(j, "variant", name);
    try {
      c.variant = parse_variant(name);
    } catch (const ContractError&) {
      throw ConfigError("variant: unknown model variant '" + name + "'");
    }
  }
  read(j, "stride", c.stride);
  read(j, "hidden", c.hidden);
  read(j, "head_width", c.head_width);
  read(j, "batch", c.batch);
  read(j, "lr", c.lr);
  read(j, "patience", c.patience);
  read(j, "dropout", c.dropout);
  read(j, "recurrent_dropout", c.recurrent_dropout);
  read(j, "l2", c.l2);
  read(j, "max_epochs", c.max_epochs);
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, kSplitKeys, "split");
    read(s, "train", c.split.train, "split.");
    read(s, "val", c.split.val, "split.");
    read(s, "test", c.split.test, "split.");
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, kSynthKeys, "synth");
    SynthConfig sc;
    sc.seed = c.seed;
    read(s, "tasks", sc.tasks, "synth.");
    read(s, "windows", sc.windows, "synth.");
    read(s, "window", sc.window, "synth.");
    read(s, "features", sc.features, "synth.");
    read(s, "labels", sc.labels, "synth.");
    read(s, "seed", sc.seed, "synth.");
    read(s, "noise", sc.noise, "synth.");
    read(s, "marker", sc.marker, "synth.");
    read(s, "pulse_fraction", sc.pulse_fraction, "synth.");
    read(s, "absent_fraction", sc.absent_fraction, "synth.");
    if (s.contains("kind")) {
      std::string kind;
      read(s, "kind", kind, "synth.");
      try {
        sc.kind = parse_task_kind(kind);
      } catch (const ContractError&) {
        throw ConfigError("synth.kind: expected classification or regression");
      }
    }
    c.synth = sc;
    // The window follows the generator unless given explicitly.
    c.window = sc.window;
  }
  read(j, "window", c.window);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path)); }

std::string run_config_json(const RunConfig& c) {
  ojson j;
  if (c.dataset_dir) j["dataset_dir"] = *c.dataset_dir;
  if (c.synth) {
    const auto& s = *c.synth;
    j["synth"] = {{"tasks", s.tasks},
                  {"windows", s.windows},
                  {"window", s.window},
                  {"features", s.features},
                  {"labels", s.labels},
                  {"seed", s.seed},
                  {"kind", std::string(to_string(s.kind))},
                  {"noise", s.noise},
                  {"marker", s.marker},
                  {"pulse_fraction", s.pulse_fraction},
                  {"absent_fraction", s.absent_fraction}};
  }
  j["variant"] = std::string(to_string(c.variant));
  j["window"] = c.window;
  j["stride"] = c.stride;
  j["hidden"] = c.hidden;
  j["head_width"] = c.head_width;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["patience"] = c.patience;
  j["dropout"] = c.dropout;
  j["recurrent_dropout"] = c.recurrent_dropout;
  j["l2"] = c.l2;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  return j.dump(2);
}

RunData load_run_data(const RunConfig& c) {
  c.validate();
  RunData out;
  out.model.variant = c.variant;
  out.model.window = c.window;
  out.model.hidden = c.hidden;
  out.model.head_width = c.head_width;
  out.model.dropout = c.dropout;
  out.model.recurrent_dropout = c.recurrent_dropout;
  out.model.l2 = c.l2;
  if (c.synth) {
    auto synth = synth_generate(*c.synth);
    for (auto& d : synth.tasks) {
      out.model.tasks.push_back(d.shape());
      out.tasks.push_back(split_windows(d, c.split));
    }
    out.manifest = std::move(synth.manifest);
  } else {
    const std::filesystem::path dir(*c.dataset_dir);
    if (!std::filesystem::is_directory(dir)) throw IoError("dataset_dir " + dir.string() + " is not a directory");
    const auto schema = load_schema(dir / "schema.json");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("dataset_dir " + dir.string() + " has no task CSV files");
    for (std::size_t k = 0; k < files.size(); ++k) {
      const auto table = load_task_csv(files[k], schema);
      auto splits = prepare_task(table, c.window, c.stride, k, c.split);
      out.model.tasks.push_back(splits.train.shape());
      out.tasks.push_back(std::move(splits));
    }
  }
  out.model.validate();
  return out;
}

TrainConfig train_config(const RunConfig& c, std::size_t workers) {
  TrainConfig t;
  t.batch = c.batch;
  t.adam.learning_rate = c.lr;
  t.patience = c.patience;
  t.max_epochs = c.max_epochs;
  t.seed = c.seed;
  t.workers = workers;
  return t;
}

}  // namespace fathom
