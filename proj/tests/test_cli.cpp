// Runs the kavan executable and checks exit codes and output files.

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "kavan/io.hpp"

namespace fs = std::filesystem;
using kavan::json;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(KAVAN_CLI) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ctest runs each case in its own process, so every case gets its own directory.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "kavan_cli_tests" /
           ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    kavan::write_json(dir_ / "tiny.json", json::parse(R"({
      "model": {"feature_dim": 4, "hidden_dim": 4, "frames": 4, "node_size": 2},
      "optimizer": {"steps": 2, "batch_size": 2}
    })"));
  }
  std::string p(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, FullWorkflow) {
  ASSERT_EQ(run("generate --n 3 --frames 4 --seed 1 --out " + p("data.jsonl")), 0);
  ASSERT_EQ(run("train --config " + p("tiny.json") + " --data " + p("data.jsonl") + " --seed 2 --quiet --out " +
                p("run")),
            0);
  for (auto f : {"params.json", "report.json", "run_config.json", "timing.json"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  auto report = kavan::read_json(dir_ / "run" / "report.json");
  for (auto key : {"nmse", "accuracy", "mean_rank_violations", "kp_loss"}) EXPECT_TRUE(report["average"].contains(key));
  EXPECT_EQ(kavan::read_json(dir_ / "run" / "run_config.json")["seed"], 2);

  ASSERT_EQ(run("eval --config " + p("tiny.json") + " --params " + p("run/params.json") + " --data " +
                p("data.jsonl") + " --out " + p("eval.json")),
            0);
  EXPECT_TRUE(kavan::read_json(dir_ / "eval.json").contains("nmse"));

  ASSERT_EQ(run("heatmap --data " + p("data.jsonl") + " --sample 1 --pgm --out " + p("heat")), 0);
  EXPECT_EQ(kavan::read_json(dir_ / "heat" / "heatmaps.json")["frames"].size(), 4u);
  EXPECT_TRUE(fs::exists(dir_ / "heat" / "heatmap_0.pgm"));

  ASSERT_EQ(run("dump-masks --config " + p("tiny.json") + " --params " + p("run/params.json") + " --data " +
                p("data.jsonl") + " --out " + p("masks")),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "masks" / "frame_3.pgm"));
}

TEST_F(Cli, GradcheckSucceeds) { EXPECT_EQ(run("gradcheck --out " + p("gc.json")), 0); }

TEST_F(Cli, ValidationFailuresExitTwo) {
  EXPECT_EQ(run("train --data " + p("missing.jsonl") + " --out " + p("x")), 2);
  EXPECT_EQ(run("nonsense"), 2);
  kavan::write_text(dir_ / "bad.json", R"({"model": {"node_size": 3}})");
  ASSERT_EQ(run("generate --n 2 --frames 4 --out " + p("d2.jsonl")), 0);
  EXPECT_EQ(run("train --config " + p("bad.json") + " --data " + p("d2.jsonl") + " --out " + p("y")), 2);
  kavan::write_text(dir_ / "broken.jsonl", "{not json\n");
  EXPECT_EQ(run("train --config " + p("tiny.json") + " --data " + p("broken.jsonl") + " --out " + p("z")), 2);
}

TEST_F(Cli, NonFiniteTrainingExitsThree) {
  ASSERT_EQ(run("generate --n 2 --frames 4 --out " + p("div.jsonl")), 0);
  kavan::write_json(dir_ / "diverge.json", json::parse(R"({
    "model": {"feature_dim": 4, "hidden_dim": 4, "frames": 4, "node_size": 2},
    "optimizer": {"kind": "sgd", "lr": 1e300, "steps": 20, "batch_size": 2}
  })"));
  EXPECT_EQ(run("train --config " + p("diverge.json") + " --data " + p("div.jsonl") + " --quiet --out " + p("n")), 3);
}
