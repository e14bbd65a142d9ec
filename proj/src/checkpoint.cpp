#include "fathom/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "fathom/errors.hpp"
#include "json.hpp"

namespace fathom {

using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "fathom-checkpoint";
constexpr int kVersion = 1;

ojson config_to(const ModelConfig& c) {
  ojson j;
  j["variant"] = std::string(to_string(c.variant));
  j["window"] = c.window;
  j["hidden"] = c.hidden;
  j["head_width"] = c.head_width;
  j["mlp_width"] = c.mlp_width;
  j["dropout"] = c.dropout;
  j["recurrent_dropout"] = c.recurrent_dropout;
  j["l2"] = c.l2;
  ojson tasks = ojson::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"features", t.features}, {"labels", t.labels}, {"kind", std::string(to_string(t.kind))}});
  }
  j["tasks"] = tasks;
  return j;
}

ModelConfig config_from(const ojson& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.window = j.at("window").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_width = j.at("head_width").get<std::size_t>();
  c.mlp_width = j.at("mlp_width").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.recurrent_dropout = j.at("recurrent_dropout").get<double>();
  c.l2 = j.at("l2").get<double>();
  for (const auto& t : j.at("tasks")) {
    c.tasks.push_back({t.at("features").get<std::size_t>(), t.at("labels").get<std::size_t>(),
                       parse_task_kind(t.at("kind").get<std::string>())});
  }
  return c;
}

}  // namespace

std::string model_config_json(const ModelConfig& config) { return config_to(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(ojson::parse(text));
  } catch (const ojson::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::string checkpoint_json(const Checkpoint& ck) {
  ojson j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["model"] = config_to(ck.model);
  if (!ck.run_config.empty()) j["run_config"] = ojson::parse(ck.run_config);
  ojson params = ojson::array();
  for (const auto& p : ck.params.parameters()) {
    ojson shape = ojson::array();
    for (std::size_t i = 0; i < p.tensor.shape().rank(); ++i) shape.push_back(p.tensor.shape()[i]);
    ojson values = ojson::array();
    for (double v : p.tensor.values()) values.push_back(v);
    params.push_back({{"name", p.name}, {"shape", shape}, {"values", values}});
  }
  j["params"] = params;
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw IoError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (j.value("format", "") != kFormat) throw IoError("not a checkpoint file");
    if (j.value("version", 0) != kVersion) throw IoError("unsupported checkpoint version");
    ck.model = config_from(j.at("model"));
    if (j.contains("run_config")) ck.run_config = j.at("run_config").dump();
    ck.model.validate();
    ck.params = zero_params(ck.model);
    std::map<std::string, const ojson*> stored;
    for (const auto& p : j.at("params")) stored[p.at("name").get<std::string>()] = &p;
    const auto expected = ck.params.parameters();
    if (stored.size() != expected.size()) {
      throw DimensionError("checkpoint has " + std::to_string(stored.size()) + " tensors, model expects " +
                           std::to_string(expected.size()));
    }
    for (const auto& p : expected) {
      auto it = stored.find(p.name);
      if (it == stored.end()) throw DimensionError("checkpoint is missing tensor " + p.name);
      const auto dims = it->second->at("shape").get<std::vector<std::size_t>>();
      const Shape found(dims);
      if (found != p.tensor.shape()) {
        throw DimensionError("tensor " + p.name + ": expected " + p.tensor.shape().to_string() + ", found " +
                             found.to_string());
      }
      const auto values = it->second->at("values").get<std::vector<double>>();
      if (values.size() != p.tensor.numel()) throw DimensionError("tensor " + p.name + ": wrong number of values");
      auto dst = Tensor(p.tensor).mutable_values();
      std::copy(values.begin(), values.end(), dst.begin());
    }
  } catch (const ojson::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_json(ck);
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace fathom
