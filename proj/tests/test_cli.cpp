#include "fixtures.hpp"

#include "vlaforge/errors.hpp"
#include "vlaforge/run_config.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace vlaforge;
using namespace vlaforge::cli;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "cli_output.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" VLAFORGE_CLI "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream(path) << j.dump(2);
}

nlohmann::json tiny_run_config() {
  auto data = synthgen::to_json(fixtures::tiny_benchmark());
  return {{"data", data},
          {"dataset", "bench"},
          {"output", "run"},
          {"train", {{"epochs", 2}, {"batch_size", 4}}},
          {"q", 3}};
}

}  // namespace

TEST(RunConfig, DefaultsAreValid) {
  auto c = load_run_config(std::nullopt, {});
  EXPECT_EQ(c.seed, 1024u);
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.model.variant, pipeline::ModelVariant::T4);
  EXPECT_EQ(c.profile.name, "toy");
  EXPECT_EQ(c.checkpoint_path(), fs::path("runs/default/model.ckpt"));
  EXPECT_EQ(c.ablate_seeds, (std::vector<uint64_t>{1024, 0, 1111}));
}

TEST(RunConfig, FlagsOverrideFile) {
  nlohmann::json j = {{"seed", 5}, {"alpha", 0.2}, {"variant", "T2"}, {"profile", "paper"}};
  Overrides o;
  o.seed = 9;
  o.out = "elsewhere";
  auto c = run_config_from_json(j, o);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.model.seed, 9u);
  EXPECT_EQ(c.alpha, 0.2);
  EXPECT_EQ(c.output, fs::path("elsewhere"));
  EXPECT_EQ(c.model.variant, pipeline::ModelVariant::T2);
  EXPECT_EQ(c.profile.learning_rate, 2e-5);
  EXPECT_EQ(c.profile.epochs, 15);
}

TEST(RunConfig, EveryProblemIsReportedAtOnce) {
  nlohmann::json j = {{"alpha", 3.0},
                      {"q", 0},
                      {"device", "cuda"},
                      {"train", {{"batch_size", 0}, {"speed", 2}}},
                      {"data", {{"strength_min", -1.0}}},
                      {"colour", "blue"}};
  try {
    run_config_from_json(j, {});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string text = e.what();
    for (const char* field : {"alpha", "q", "device", "train.batch_size", "train.speed", "strength_min", "colour"}) {
      EXPECT_NE(text.find(field), std::string::npos) << field << "\n" << text;
    }
    EXPECT_GE(e.problems().size(), 7u);
  }
}

TEST(RunConfig, JsonRoundTrip) {
  nlohmann::json j = {{"seed", 3}, {"variant", "T3"}, {"ablate", {{"variants", {"Base", "T4"}}, {"seeds", {1, 2}}}}};
  auto c = run_config_from_json(j, {});
  auto again = run_config_from_json(to_json(c), {});
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(Cli, ExitCodes) {
  const auto dir = fixtures::scratch_dir("cli_codes");
  EXPECT_EQ(run_cli("--help", dir).code, 0);
  EXPECT_EQ(run_cli("", dir).code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
  EXPECT_EQ(run_cli("train --alpha nope", dir).code, 2);
  EXPECT_EQ(run_cli("eval --alpha 1.5", dir).code, 2);
  write_json(dir / "bad.json", {{"q", -1}, {"alpha", 7}});
  auto bad = run_cli("train --config bad.json", dir);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("q must"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("alpha"), std::string::npos) << bad.out;
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run_cli("train --config broken.json", dir).code, 2);
  // no dataset yet
  EXPECT_EQ(run_cli("train", dir).code, 2);
  // a checkpoint that is not one
  write_json(dir / "cfg.json", tiny_run_config());
  ASSERT_EQ(run_cli("gen-data --config cfg.json", dir).code, 0);
  fs::create_directories(dir / "run");
  std::ofstream(dir / "run" / "model.ckpt") << "garbage";
  EXPECT_EQ(run_cli("eval --config cfg.json", dir).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, ShowPrompts) {
  const auto dir = fixtures::scratch_dir("cli_prompts");
  auto r = run_cli("--show-prompts", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("This is a real photo of <id> person."), std::string::npos);
  EXPECT_NE(r.out.find("This is a fake photo of <id> person."), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, EndToEnd) {
  const auto dir = fixtures::scratch_dir("cli_e2e");
  write_json(dir / "cfg.json", tiny_run_config());

  auto gen = run_cli("gen-data --config cfg.json", dir);
  ASSERT_EQ(gen.code, 0) << gen.out;
  EXPECT_EQ(gen.out.rfind("# ", 0), 0u);
  ASSERT_TRUE(fs::exists(dir / "bench" / "manifest.jsonl"));
  const auto first = fs::file_size(dir / "bench" / "manifest.jsonl");
  ASSERT_EQ(run_cli("gen-data --config cfg.json", dir).code, 0);
  EXPECT_EQ(fs::file_size(dir / "bench" / "manifest.jsonl"), first);

  auto train = run_cli("train --config cfg.json --seed 4", dir);
  ASSERT_EQ(train.code, 0) << train.out;
  ASSERT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  std::ifstream log(dir / "run" / "train_log.jsonl");
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"], ++epochs);
    EXPECT_TRUE(j.contains("L_final"));
  }
  EXPECT_EQ(epochs, 2);
  auto effective = nlohmann::json::parse(std::ifstream(dir / "run" / "effective_config.json"));
  EXPECT_EQ(effective["seed"], 4);

  auto eval = run_cli("eval --config cfg.json --alpha 0.3", dir);
  ASSERT_EQ(eval.code, 0) << eval.out;
  auto report = nlohmann::json::parse(std::ifstream(dir / "run" / "eval_report.json"));
  EXPECT_EQ(report["alpha"], 0.3);
  EXPECT_GE(report["frame_auroc"].get<double>(), 0.0);
  EXPECT_LE(report["frame_auroc"].get<double>(), 1.0);

  auto viz = run_cli("viz --config cfg.json", dir);
  ASSERT_EQ(viz.code, 0) << viz.out;
  int pngs = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "run" / "heatmaps")) {
    pngs += entry.path().extension() == ".png" && entry.path().parent_path().filename() != "overlays";
  }
  EXPECT_EQ(pngs, 3 + 3);
  fs::remove_all(dir);
}
