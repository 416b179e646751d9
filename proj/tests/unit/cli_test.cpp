// Copyright 2026 The VLA Adapt Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lab/checkpoint.hpp"
#include "lab/experiment.hpp"
#include "lab/report.hpp"

namespace lab::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome lab(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // A small untrained base and the config that describes it.
  void make_base() {
    exp::LabConfig c;
    c.model.encoder.image_size = 16;
    c.model.encoder.patch_size = 8;
    c.model.encoder.d_model = 32;
    c.model.encoder.n_layers = 1;
    c.model.encoder.n_heads = 2;
    c.model.policy.n_layers = 1;
    c.model.policy.n_heads = 2;
    c.env.image_size = 16;
    c.adapt.steps = 5;
    c.adapt.batch_size = 4;
    c.adapt.schedule = {1, 5, 1e-2, 1e-3};
    std::ofstream(dir_ / "tiny.toml") << exp::config_to_toml(c);
    ParamStore s;
    Rng rng(2);
    policy::init_model(s, c.model, rng);
    save_checkpoint(dir_ / "base.ckpt", exp::base_checkpoint(s, c));
  }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(lab({}).code, kUsage);
  EXPECT_EQ(lab({"frobnicate"}).code, kUsage);
  EXPECT_EQ(lab({"report"}).code, kUsage);  // --results is required
  EXPECT_EQ(lab({"report", "--results", p("missing.csv")}).code, kUsage);
  EXPECT_EQ(lab({"theory", "--seed", "minus-one"}).code, kUsage);
  EXPECT_EQ(lab({"--help"}).code, kOk);
}

TEST_F(CliTest, BadConfigExitsOne) {
  std::ofstream(dir_ / "bad.toml") << "[encoder]\nwidth = 3\n";
  const Outcome r = lab({"pretrain", "--config", p("bad.toml"), "--out", p("o")});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("width"), std::string::npos) << r.err;
}

TEST_F(CliTest, PretrainCapExitsTwo) {
  make_base();
  exp::LabConfig c = exp::load_config(dir_ / "tiny.toml");
  c.pretrain.max_steps = 2;
  c.pretrain.warmup_steps = 1;
  c.pretrain.images_per_batch = 1;
  c.pretrain.states_per_image = 1;
  c.pretrain.eval_every = 1;
  c.pretrain.eval_episodes = 4;
  c.pretrain.target_success = 1.0;
  std::ofstream(dir_ / "cap.toml") << exp::config_to_toml(c);
  const Outcome r = lab({"pretrain", "--config", p("cap.toml"), "--out", p("o")});
  EXPECT_EQ(r.code, kNumeric) << r.err;
}

TEST_F(CliTest, TheoryWritesOneJsonPerScenario) {
  const Outcome r = lab({"theory", "--scenario", "planted-spectrum", "--scenario", "identity-drift",
                     "--out", p("t"), "--seed", "3"});
  EXPECT_EQ(r.code, kOk) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir_ / "t" / "theory_planted-spectrum.json"));
  EXPECT_EQ(j["ok"], true);
  EXPECT_TRUE(j.contains("tail_energies"));
  EXPECT_TRUE(fs::exists(dir_ / "t" / "theory_identity-drift.json"));
  EXPECT_EQ(lab({"theory", "--scenario", "nope", "--out", p("t")}).code, kUsage);
}

TEST_F(CliTest, SweepAndReportAreByteStable) {
  make_base();
  const std::vector<std::string> args{"sweep",        "--base",     p("base.ckpt"), "--config",
                                      p("tiny.toml"), "--preset",   "smoke",        "--episodes",
                                      "2",            "--no-time",  "--seed",       "5"};
  auto a = args;
  a.insert(a.end(), {"--out", p("s1"), "--threads", "1"});
  auto b = args;
  b.insert(b.end(), {"--out", p("s2"), "--threads", "2"});
  ASSERT_EQ(lab(a).code, kOk);
  ASSERT_EQ(lab(b).code, kOk);
  const std::string csv = slurp(dir_ / "s1" / "results.csv");
  EXPECT_EQ(csv, slurp(dir_ / "s2" / "results.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), exp::kResultsHeader);
  EXPECT_EQ(exp::load_results_csv(dir_ / "s1" / "results.csv").size(), 3u);

  const Outcome r1 = lab({"report", "--results", p("s1/results.csv"), "--out", p("r1")});
  const Outcome r2 = lab({"report", "--results", p("s2/results.csv"), "--out", p("r2")});
  EXPECT_EQ(r1.code, kOk) << r1.err;
  EXPECT_EQ(slurp(dir_ / "r1" / "report.json"), slurp(dir_ / "r2" / "report.json"));
  EXPECT_EQ(r1.out, slurp(dir_ / "r1" / "report.txt"));

  const Outcome paper = lab({"report", "--results", p("s1/results.csv"), "--preset", "paper-scale"});
  EXPECT_NE(paper.out.find("4096"), std::string::npos) << paper.out;
  EXPECT_NE(paper.out.find("0.004M"), std::string::npos);
  EXPECT_EQ(lab({"report", "--results", p("s1/results.csv"), "--preset", "huge"}).code, kUsage);
}

TEST_F(CliTest, MalformedResultsExitOneWithLine) {
  std::ofstream(dir_ / "bad.csv") << exp::kResultsHeader << "\nx,none,none,0,2,0,0,0\n";
  const Outcome r = lab({"report", "--results", p("bad.csv")});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find(":2:"), std::string::npos) << r.err;
}

TEST_F(CliTest, AdaptWritesAdapterOnlyDelta) {
  make_base();
  const Outcome r = lab({"adapt", "--base", p("base.ckpt"), "--config", p("tiny.toml"), "--perturb",
                     "camera_orbit:30", "--adapter", "ftm", "--out", p("a"), "--seed", "4"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const Checkpoint delta = load_checkpoint(dir_ / "a" / "delta.ckpt");
  EXPECT_TRUE(delta.is_delta());
  ASSERT_FALSE(delta.arrays.empty());
  for (const auto& [name, arr] : delta.arrays) EXPECT_TRUE(adapters::is_adapter_param(name)) << name;
  EXPECT_TRUE(fs::exists(dir_ / "a" / "adapt_loss.csv"));

  // The recorded demo replays through --demo to the same delta.
  const Outcome again = lab({"adapt", "--base", p("base.ckpt"), "--config", p("tiny.toml"), "--demo",
                         p("a/demo.ckpt"), "--adapter", "ftm", "--out", p("b"), "--seed", "4"});
  ASSERT_EQ(again.code, kOk) << again.err;
  EXPECT_EQ(slurp(dir_ / "a" / "delta.ckpt"), slurp(dir_ / "b" / "delta.ckpt"));
}

TEST_F(CliTest, AdaptNoneMatchesZeroShot) {
  make_base();
  const Outcome r = lab({"adapt", "--base", p("base.ckpt"), "--config", p("tiny.toml"), "--perturb",
                     "lighting:2", "--adapter", "none", "--episodes", "3", "--out", p("a")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir_ / "a" / "adapt.json"));
  EXPECT_EQ(j["adapted_success"], j["zero_shot_success"]);
  EXPECT_EQ(j["trainable_params"], 0);
}

TEST_F(CliTest, AdaptRejectsMismatchedConfig) {
  make_base();
  std::ofstream(dir_ / "other.toml") << "";
  EXPECT_EQ(lab({"adapt", "--base", p("base.ckpt"), "--config", p("other.toml"), "--perturb",
                 "lighting:1", "--out", p("a")})
                .code,
            kUsage);
  EXPECT_EQ(lab({"adapt", "--base", p("base.ckpt"), "--out", p("a")}).code, kUsage);
  EXPECT_EQ(lab({"adapt", "--base", p("base.ckpt"), "--perturb", "camera_orbit", "--out", p("a")}).code,
            kUsage);
}

}  // namespace
}  // namespace lab::cli
