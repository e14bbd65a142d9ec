#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "fathom_test_cli";

int run(const std::string& args, const std::string& stderr_file = "") {
  std::string cmd = "FATHOM_LOG=0 \"" FATHOM_BIN "\" " + args;
  cmd += stderr_file.empty() ? " 2>/dev/null" : " 2>\"" + stderr_file + "\"";
  cmd += " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kWork);
  const auto p = kWork / name;
  std::ofstream(p) << text;
  return p;
}

const char* kSmall = R"({"synth": {"tasks": 2, "windows": 120, "window": 6, "features": 5},
  "hidden": 6, "head_width": 6, "batch": 20, "max_epochs": 3, "lr": 0.005})";

json without_wall_time(const fs::path& report) {
  auto j = json::parse(slurp(report));
  j.erase("wall_time_seconds");
  return j;
}

}  // namespace

TEST_CASE("missing data source exits 2 and names the field") {
  const auto cfg = write_config("nodata.json", R"({"variant": "FATHOM"})");
  const auto err = (kWork / "nodata.err").string();
  CHECK(run("train --config " + cfg.string(), err) == 2);
  CHECK(slurp(err).find("dataset_dir") != std::string::npos);
}

TEST_CASE("argument and config errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("train") == 2);
  CHECK(run("frobnicate") == 2);
  const auto cfg = write_config("typo.json", R"({"synth": {}, "hiddden": 3})");
  CHECK(run("train --config " + cfg.string()) == 2);
  CHECK(run("train --config " + (kWork / "absent.json").string()) == 2);
}

TEST_CASE("quickstart run finishes within a minute") {
  const auto out = kWork / "quickstart";
  fs::remove_all(out);
  const auto start = std::chrono::steady_clock::now();
  CHECK(run("train --config \"" FATHOM_SOURCE_DIR "/configs/quickstart.json\" --out " + out.string()) == 0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 60.0);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "checkpoint.json"));
  CHECK(fs::exists(out / "audit.jsonl"));
  const auto report = json::parse(slurp(out / "report.json"));
  CHECK(report["config"]["synth"]["features"] == 8);
  CHECK(report["tasks"].size() == 3);
}

TEST_CASE("training is reproducible, eval matches the report") {
  const auto cfg = write_config("small.json", kSmall);
  const auto a = kWork / "a";
  REQUIRE(run("train --config " + cfg.string() + " --out " + a.string() + " --workers 1") == 0);
  const auto first_report = without_wall_time(a / "report.json");
  const auto first_checkpoint = slurp(a / "checkpoint.json");
  REQUIRE(run("train --config " + cfg.string() + " --out " + a.string()) == 0);
  CHECK(without_wall_time(a / "report.json").dump() == first_report.dump());
  CHECK(slurp(a / "checkpoint.json") == first_checkpoint);

  // The echoed config alone relaunches the identical run.
  const auto echo = write_config("echo.json", without_wall_time(a / "report.json")["config"].dump());
  const auto c = kWork / "c";
  REQUIRE(run("train --config " + echo.string() + " --out " + c.string()) == 0);
  auto ra = without_wall_time(a / "report.json");
  auto rc = without_wall_time(c / "report.json");
  ra["config"].erase("output_dir");
  rc["config"].erase("output_dir");
  CHECK(ra == rc);

  const auto eval_out = kWork / "eval.json";
  REQUIRE(run("eval --checkpoint " + (a / "checkpoint.json").string() + " --out " + eval_out.string()) == 0);
  const auto eval = json::parse(slurp(eval_out));
  CHECK(eval["macro"] == ra["macro"]);
  CHECK(eval["tasks"] == ra["tasks"]);

  SUBCASE("a different seed changes the run") {
    const auto d = kWork / "d";
    REQUIRE(run("train --config " + cfg.string() + " --seed 2 --out " + d.string()) == 0);
    const auto rd = without_wall_time(d / "report.json");
    CHECK(rd["config"]["seed"] == 2);
    CHECK(rd["tasks"] != ra["tasks"]);
  }
  SUBCASE("shape mismatch exits 1 naming both shapes") {
    const auto other = write_config("other.json", R"({"synth": {"tasks": 2, "windows": 120, "window": 6,
      "features": 7}})");
    const auto err = (kWork / "mismatch.err").string();
    CHECK(run("eval --checkpoint " + (a / "checkpoint.json").string() + " --config " + other.string(), err) == 1);
    const auto msg = slurp(err);
    CHECK(msg.find("expected") != std::string::npos);
    CHECK(msg.find("D=5") != std::string::npos);
    CHECK(msg.find("D=7") != std::string::npos);
  }
}

TEST_CASE("export follows the variant") {
  const auto sa_cfg = write_config("sa.json", std::string(kSmall).replace(1, 0, R"("variant": "FATHOM-sa", )"));
  const auto full = kWork / "full";
  const auto sa = kWork / "sa";
  REQUIRE(run("train --config " + write_config("full.json", kSmall).string() + " --out " + full.string()) == 0);
  REQUIRE(run("train --config " + sa_cfg.string() + " --out " + sa.string()) == 0);

  const auto full_exp = kWork / "full_attention";
  const auto sa_exp = kWork / "sa_attention";
  fs::remove_all(full_exp);
  fs::remove_all(sa_exp);
  REQUIRE(run("export-attention --checkpoint " + (full / "checkpoint.json").string() + " --out " +
              full_exp.string()) == 0);
  REQUIRE(run("export-attention --checkpoint " + (sa / "checkpoint.json").string() + " --out " + sa_exp.string()) ==
          0);
  CHECK(fs::exists(full_exp / "sensor_attention_task0_window0.csv"));
  CHECK(fs::exists(full_exp / "time_attention_task1_window0.csv"));
  CHECK(fs::exists(full_exp / "spikes.csv"));
  std::size_t sensor_files = 0;
  for (const auto& e : fs::directory_iterator(sa_exp)) {
    if (e.path().filename().string().rfind("sensor_attention", 0) == 0) ++sensor_files;
  }
  CHECK(sensor_files == 0);
  CHECK(fs::exists(sa_exp / "time_attention_task0_window0.csv"));
}

TEST_CASE("synth manifests are deterministic") {
  const auto m1 = kWork / "m1.json";
  const auto m2 = kWork / "m2.json";
  const auto m3 = kWork / "m3.json";
  REQUIRE(run("synth --seed 5 --out " + m1.string()) == 0);
  REQUIRE(run("synth --seed 5 --out " + m2.string()) == 0);
  REQUIRE(run("synth --seed 6 --out " + m3.string()) == 0);
  CHECK(slurp(m1) == slurp(m2));
  CHECK(slurp(m1) != slurp(m3));
  const auto cfg = write_config("synth.json", kSmall);
  REQUIRE(run("synth --config " + cfg.string() + " --out " + m3.string()) == 0);
  CHECK(json::parse(slurp(m3))["features"] == 5);
}
