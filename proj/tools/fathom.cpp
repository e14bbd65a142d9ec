// fathom: train, evaluate and inspect federated multi-task attention models.
//
// Exit codes: 0 ok, 1 runtime failure, 2 bad configuration or arguments.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fathom/checkpoint.hpp"
#include "fathom/config.hpp"
#include "fathom/errors.hpp"
#include "fathom/federated.hpp"
#include "fathom/metrics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fathom;

namespace {

// FATHOM_LOG: 0 or "quiet", 1 or "info" (default), 2 or "debug".
int log_level() {
  const char* env = std::getenv("FATHOM_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "0" || v == "quiet" || v == "error") return 0;
  if (v == "2" || v == "debug") return 2;
  return 1;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

struct Overrides {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::size_t limit = 0;
};

RunConfig resolve_config(const Overrides& o) {
  auto c = load_run_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    if (c.synth) c.synth->seed = *o.seed;
  }
  if (!o.out.empty()) c.output_dir = o.out;
  c.validate();
  return c;
}

// The run config stored in a checkpoint, or the one given with --config.
RunConfig eval_config(const Overrides& o, const Checkpoint& ck) {
  if (!o.config.empty()) return resolve_config(o);
  if (ck.run_config.empty()) throw ConfigError("config: checkpoint has no run config, pass --config");
  auto c = parse_run_config(ck.run_config);
  if (o.seed) {
    c.seed = *o.seed;
    if (c.synth) c.synth->seed = *o.seed;
  }
  return c;
}

std::string shape_text(std::size_t window, const TaskShape& t) {
  return "(T=" + std::to_string(window) + ", D=" + std::to_string(t.features) + ", M=" + std::to_string(t.labels) +
         ", " + std::string(to_string(t.kind)) + ")";
}

void check_compatible(const ModelConfig& model, const ModelConfig& data) {
  if (model.tasks.size() != data.tasks.size()) {
    throw DimensionError("checkpoint has " + std::to_string(model.tasks.size()) + " tasks, dataset has " +
                         std::to_string(data.tasks.size()));
  }
  for (std::size_t k = 0; k < model.tasks.size(); ++k) {
    const auto& a = model.tasks[k];
    const auto& b = data.tasks[k];
    if (model.window != data.window || a.features != b.features || a.labels != b.labels || a.kind != b.kind) {
      throw DimensionError("task " + std::to_string(k) + ": expected " + shape_text(model.window, a) + ", found " +
                           shape_text(data.window, b));
    }
  }
}

int cmd_train(const Overrides& o) {
  const auto config = resolve_config(o);
  const int level = log_level();
  const auto echo = run_config_json(config);
  if (level >= 2) std::cerr << "config:\n" << echo << "\n";
  auto data = load_run_data(config);
  const fs::path out_dir = config.output_dir;
  fs::create_directories(out_dir);

  std::ofstream audit(out_dir / "audit.jsonl", std::ios::binary | std::ios::trunc);
  if (!audit) throw IoError("cannot write " + (out_dir / "audit.jsonl").string());

  auto train = train_config(config, o.workers);
  if (level >= 1) {
    train.on_epoch = [](const EpochRecord& e) {
      std::fprintf(stderr, "epoch %zu  train %.6f  val %.6f\n", e.epoch, e.train_loss, e.val_loss);
    };
  }
  const auto model = data.model;
  Federation fed(model, std::move(data.tasks), train);
  fed.log().set_sink(&audit);
  const auto report = fed.fit();
  audit.close();

  write_file(out_dir / "report.json", report_json(report, echo));
  save_checkpoint({model, fed.params(), echo}, out_dir / "checkpoint.json");
  if (level >= 1) {
    std::fprintf(stderr, "best epoch %zu of %zu", report.best_epoch, report.epochs_run);
    if (report.f1) std::fprintf(stderr, "  test F1 %.4f", *report.f1);
    if (report.smape) std::fprintf(stderr, "  test SMAPE %.4f", *report.smape);
    std::fprintf(stderr, "\nwrote %s\n", (out_dir / "report.json").string().c_str());
  }
  return 0;
}

// Loads checkpoint and data and builds a federation holding the stored
// parameters.
struct Loaded {
  Checkpoint checkpoint;
  RunConfig config;
  std::unique_ptr<Federation> federation;
  std::vector<std::vector<std::string>> feature_names;
};

Loaded load_for_eval(const Overrides& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint: required");
  Loaded l;
  l.checkpoint = load_checkpoint(o.checkpoint);
  l.config = eval_config(o, l.checkpoint);
  auto data = load_run_data(l.config);
  check_compatible(l.checkpoint.model, data.model);
  for (const auto& t : data.tasks) l.feature_names.push_back(t.test.feature_names);
  l.federation = std::make_unique<Federation>(l.checkpoint.model, std::move(data.tasks),
                                              train_config(l.config, o.workers), l.checkpoint.params);
  return l;
}

int cmd_eval(const Overrides& o) {
  auto l = load_for_eval(o);
  const auto eval = l.federation->evaluate(2);
  TrainingReport report;
  report.variant = std::string(to_string(l.checkpoint.model.variant));
  report.tasks = task_metrics(eval, l.checkpoint.model.tasks);
  summarize(report);
  // Same layout as the training report, without the training history.
  auto j = nlohmann::ordered_json::parse(report_json(report));
  nlohmann::ordered_json out;
  out["variant"] = j["variant"];
  out["tasks"] = j["tasks"];
  out["macro"] = j["macro"];
  const auto text = out.dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    write_file(o.out, text);
  }
  return 0;
}

int cmd_export(const Overrides& o) {
  if (o.out.empty()) throw ConfigError("--out: required");
  auto l = load_for_eval(o);
  const auto eval = l.federation->evaluate(2, true);
  const auto& model = l.checkpoint.model;
  const std::size_t T = model.window;
  std::vector<AttentionRecord> records;
  for (std::size_t k = 0; k < model.tasks.size(); ++k) {
    const std::size_t D = model.tasks[k].features;
    const std::size_t n = eval.predictions[k].shape()[0];
    const std::size_t count = o.limit == 0 ? n : std::min(n, o.limit);
    for (std::size_t i = 0; i < count; ++i) {
      AttentionRecord r;
      r.task_id = k;
      r.window_index = i;
      r.steps = T;
      r.feature_names = l.feature_names[k];
      if (!eval.sensor_attention.empty() && !eval.sensor_attention[k].empty()) {
        const auto& s = eval.sensor_attention[k];
        r.sensor_attention.assign(s.begin() + i * T * D, s.begin() + (i + 1) * T * D);
      }
      if (!eval.time_attention.empty() && !eval.time_attention[k].empty()) {
        const auto& a = eval.time_attention[k];
        r.time_attention.assign(a.begin() + i * T, a.begin() + (i + 1) * T);
      }
      records.push_back(std::move(r));
    }
  }
  fs::create_directories(o.out);
  const auto files = export_attention(records, o.out);
  if (log_level() >= 1) std::fprintf(stderr, "wrote %zu files to %s\n", files.size(), o.out.c_str());
  return 0;
}

int cmd_synth(const Overrides& o) {
  if (o.out.empty()) throw ConfigError("--out: required");
  SynthConfig sc;
  if (!o.config.empty()) {
    const auto c = resolve_config(o);
    if (!c.synth) throw ConfigError("synth: the config has no synth block");
    sc = *c.synth;
  } else if (o.seed) {
    sc.seed = *o.seed;
  }
  sc.validate();
  const auto synth = synth_generate(sc);
  write_file(o.out, manifest_to_json(synth.manifest));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-task hierarchical attention models for sensor time series"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "Train a model and write report.json, checkpoint.json, audit.jsonl");
  train->add_option("--config", o.config, "Run configuration (JSON)")->required();
  train->add_option("--out", o.out, "Output directory, overrides output_dir");
  train->add_option("--seed", o.seed, "Master seed, overrides the config (and the generator seed)");
  train->add_option("--workers", o.workers, "Node threads, 0 means one per task");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its test split");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--config", o.config, "Run configuration, defaults to the one stored in the checkpoint");
  eval->add_option("--out", o.out, "Write the metrics JSON here instead of stdout");
  eval->add_option("--seed", o.seed, "Master seed override");
  eval->add_option("--workers", o.workers, "Node threads, 0 means one per task");

  auto* exp = app.add_subcommand("export-attention", "Write attention matrices of the test split as CSV");
  exp->add_option("--checkpoint", o.checkpoint, "Checkpoint written by train")->required();
  exp->add_option("--config", o.config, "Run configuration, defaults to the one stored in the checkpoint");
  exp->add_option("--out", o.out, "Output directory")->required();
  exp->add_option("--seed", o.seed, "Master seed override");
  exp->add_option("--workers", o.workers, "Node threads, 0 means one per task");
  exp->add_option("--limit", o.limit, "Windows per task to export, 0 means all");

  auto* synth = app.add_subcommand("synth", "Write the manifest of a synthetic benchmark");
  synth->add_option("--config", o.config, "Run configuration with a synth block");
  synth->add_option("--out", o.out, "Manifest path")->required();
  synth->add_option("--seed", o.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*exp) return cmd_export(o);
    if (*synth) return cmd_synth(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
