// Copyright 2026 The dpzv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpzv/cli.hpp"
#include "oracles.hpp"

namespace dpzv {
namespace {

namespace fs = std::filesystem;

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void Spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

struct CliResult {
  int status;
  std::string out, err;
};

CliResult Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dpzv_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

// The snapshot records its own output directory; everything else must match.
std::string WithoutOutputDir(const std::string& yaml) {
  std::istringstream in(yaml);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.rfind("output_dir:", 0) != 0) kept += line + "\n";
  }
  return kept;
}

std::vector<std::vector<std::string>> ReadCsv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(Slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

constexpr const char* kMinimal = R"(rounds: 100
batch_size: 8
eval_every: 20
privacy: {epsilon: 2.0, delta: 0.001, clip: 1.0}
devices: {count: 2, model: linear, embed_dim: 3}
data: {source: synthetic, num_samples: 200, total_dim: 8, margin: 5.0}
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dpzv_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path Config(const std::string& text, const std::string& name = "cfg.yaml") {
    Spit(dir_ / name, text);
    return dir_ / name;
  }

  fs::path dir_;
};

TEST_F(CliTest, RunWritesArtifacts) {
  const auto cfg = Config(kMinimal);
  const auto r = Cli({"run", cfg.string(), "--out", (dir_ / "a").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = ReadCsv(dir_ / "a" / "metrics.csv");
  ASSERT_EQ(rows.size(), 102u);  // header + warmup + 100 rounds
  for (const auto& row : rows) EXPECT_EQ(row.size(), 9u);
  EXPECT_EQ(rows[1][0], "0");
  EXPECT_EQ(rows.back()[0], "100");
  const auto ledger = ReadCsv(dir_ / "a" / "ledger.csv");
  EXPECT_EQ(ledger[0].size(), 5u);
  for (const auto& row : ledger) EXPECT_EQ(row.size(), 5u);
  EXPECT_EQ(ledger.size(), 1u + 2u + 100u);  // header, one warmup entry per device, rounds
  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "resolved_config.yaml"));
}

TEST_F(CliTest, RerunIsByteIdentical) {
  const auto cfg = Config(kMinimal);
  ASSERT_EQ(Cli({"run", cfg.string(), "--out", (dir_ / "a").string()}).status, 0);
  ASSERT_EQ(Cli({"run", cfg.string(), "--out", (dir_ / "b").string()}).status, 0);
  for (const char* f : {"metrics.csv", "ledger.csv", "checkpoint.bin"}) {
    EXPECT_EQ(Slurp(dir_ / "a" / f), Slurp(dir_ / "b" / f)) << f;
  }
  EXPECT_EQ(WithoutOutputDir(Slurp(dir_ / "a" / "resolved_config.yaml")),
            WithoutOutputDir(Slurp(dir_ / "b" / "resolved_config.yaml")));
  ASSERT_EQ(Cli({"run", cfg.string(), "--seed", "9", "--out", (dir_ / "c").string()}).status, 0);
  EXPECT_NE(Slurp(dir_ / "a" / "metrics.csv"), Slurp(dir_ / "c" / "metrics.csv"));
}

TEST_F(CliTest, ResolvedConfigReproducesRun) {
  const auto cfg = Config(kMinimal);
  ASSERT_EQ(Cli({"run", cfg.string(), "--out", (dir_ / "a").string()}).status, 0);
  const auto resolved = dir_ / "a" / "resolved_config.yaml";
  const auto r = Cli({"run", resolved.string(), "--out", (dir_ / "b").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(Slurp(dir_ / "a" / "metrics.csv"), Slurp(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(WithoutOutputDir(Slurp(resolved)),
            WithoutOutputDir(Slurp(dir_ / "b" / "resolved_config.yaml")));
  EXPECT_NE(Slurp(resolved).find("target_accuracy: 0.9\n"), std::string::npos);
}

TEST_F(CliTest, LoadCheckpointResumesFromModels) {
  const auto cfg = Config(kMinimal);
  ASSERT_EQ(Cli({"run", cfg.string(), "--out", (dir_ / "a").string()}).status, 0);
  const auto ck = (dir_ / "a" / "checkpoint.bin").string();
  const auto r = Cli({"run", cfg.string(), "--out", (dir_ / "b").string(), "--load", ck});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(Slurp(dir_ / "a" / "metrics.csv"), Slurp(dir_ / "b" / "metrics.csv"));
  Spit(dir_ / "junk.bin", "not a checkpoint");
  EXPECT_EQ(Cli({"run", cfg.string(), "--out", (dir_ / "c").string(), "--load",
                 (dir_ / "junk.bin").string()})
                .status,
            1);
}

TEST_F(CliTest, ConfigErrorsExitTwoWithLocation) {
  auto r = Cli({"run", Config("rounds: 10\nprivacy: {epsilon: 1.0, sigma_dp: 0.5}\n").string()});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find(":2:"), std::string::npos) << r.err;

  r = Cli({"run", Config("rounds: 10\nbatch_size: 8\nroundz: 5\n").string()});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("cfg.yaml:3:"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("roundz"), std::string::npos) << r.err;

  r = Cli({"run", Config("rounds: ten\n").string()});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find(":1:"), std::string::npos) << r.err;

  r = Cli({"run", Config("devices:\n  - {model: linear}\n  - {model: cnn}\n").string()});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find(":3:"), std::string::npos) << r.err;

  EXPECT_EQ(Cli({"run", (dir_ / "missing.yaml").string()}).status, 2);
  EXPECT_EQ(Cli({"frobnicate"}).status, 2);
  EXPECT_EQ(Cli({}).status, 2);
}

TEST_F(CliTest, RuntimeFailureExitsOne) {
  const auto cfg = Config(
      "rounds: 5\ndata: {source: idx, images: /nonexistent/a.idx, labels: /nonexistent/b.idx}\n");
  const auto r = Cli({"run", cfg.string(), "--out", (dir_ / "a").string()});
  EXPECT_EQ(r.status, 1) << r.err;
}

double Field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + " = ");
  EXPECT_NE(pos, std::string::npos) << text;
  return std::stod(text.substr(pos + key.size() + 3));
}

TEST(Budget, Examples) {
  auto r = Cli({"budget", "--epsilon", "1", "--delta", "1e-3"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NEAR(Field(r.out, "mu"), oracle::SolveMu(1.0, 1e-3), 1e-6);

  r = Cli({"budget", "--mu", "1", "--epsilon", "1"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NEAR(Field(r.out, "delta"), 0.126936, 1e-6);

  r = Cli({"budget", "--mu", "1", "--delta", "0.12693673750664395"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NEAR(Field(r.out, "epsilon"), 1.0, 1e-6);

  r = Cli({"budget", "--epsilon", "1", "--delta", "1e-3", "--T", "100", "--D", "1000", "--C", "10"});
  ASSERT_EQ(r.status, 0) << r.err;
  const double mu = oracle::SolveMu(1.0, 1e-3);
  char want[64];
  std::snprintf(want, sizeof want, "sigma_dp = %.6g\n", 20.0 * 10.0 / (1000.0 * mu));
  EXPECT_NE(r.out.find(want), std::string::npos) << r.out;
}

TEST(Budget, UsageErrors) {
  EXPECT_EQ(Cli({"budget", "--epsilon", "1"}).status, 2);
  EXPECT_EQ(Cli({"budget", "--epsilon", "1", "--delta", "1e-3", "--mu", "1"}).status, 2);
  EXPECT_EQ(Cli({"budget", "--epsilon", "1", "--delta", "1e-3", "--T", "100"}).status, 2);
  const auto r = Cli({"budget", "--epsilon", "1e4", "--delta", "1e-3"});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("unreachable"), std::string::npos) << r.err;
}

TEST_F(CliTest, EpsilonSweep) {
  const auto cfg = Config(kMinimal);
  const auto out = dir_ / "sweep";
  const auto r = Cli({"sweep", cfg.string(), "--axis", "epsilon", "--values", "0.5,1,inf",
                      "--out", out.string()});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = ReadCsv(out / "summary.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"value", "sigma_dp", "final_acc",
                                                "rounds_to_target", "V_T"}));
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < rows.size(); ++k) {
    ASSERT_EQ(rows[k].size(), 5u);
    const double sigma = std::stod(rows[k][1]);
    EXPECT_LE(sigma, prev);
    prev = sigma;
  }
  EXPECT_EQ(std::stod(rows[3][1]), 0.0);
  for (int k = 0; k < 3; ++k) {
    EXPECT_TRUE(fs::exists(out / ("cell_" + std::to_string(k)) / "metrics.csv"));
  }

  const auto again = dir_ / "sweep2";
  ASSERT_EQ(Cli({"sweep", cfg.string(), "--axis", "epsilon", "--values", "0.5,1,inf", "--out",
                 again.string()})
                .status,
            0);
  EXPECT_EQ(Slurp(out / "summary.csv"), Slurp(again / "summary.csv"));
}

TEST_F(CliTest, SweepUsageErrors) {
  const auto cfg = Config(kMinimal);
  EXPECT_EQ(Cli({"sweep", cfg.string(), "--axis", "epsilon", "--values", ""}).status, 2);
  EXPECT_EQ(Cli({"sweep", cfg.string(), "--axis", "gamma", "--values", "1"}).status, 2);
  EXPECT_EQ(Cli({"sweep", cfg.string(), "--axis", "B", "--values", "abc"}).status, 2);
}

TEST_F(CliTest, SweepKeepsPartialResults) {
  const auto cfg = Config(kMinimal);
  const auto out = dir_ / "sweep";
  const auto r =
      Cli({"sweep", cfg.string(), "--axis", "B", "--values", "8,500,4", "--out", out.string()});
  EXPECT_EQ(r.status, 2);
  const auto rows = ReadCsv(out / "summary.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "8");
  EXPECT_EQ(rows[2][0], "4");
}

TEST_F(CliTest, MultipleSeedsUseSubdirectories) {
  const auto cfg = Config(std::string(kMinimal) + "seeds: [1, 2]\n");
  ASSERT_EQ(Cli({"run", cfg.string(), "--out", (dir_ / "a").string()}).status, 0);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "seed_1" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "seed_2" / "metrics.csv"));
}

TEST_F(CliTest, ShippedConfigsParse) {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(DPZV_CONFIG_DIR)) {
    if (entry.path().extension() != ".yaml") continue;
    ++count;
    const auto cfg = LoadConfigFile(entry.path().string());
    EXPECT_NO_THROW(cfg.run.Validate()) << entry.path();
    if (cfg.data.source != "synthetic") continue;
    const auto r = Cli({"run", entry.path().string(), "--out", (dir_ / entry.path().stem()).string()});
    EXPECT_EQ(r.status, 0) << entry.path() << r.err;
  }
  EXPECT_GE(count, 4);
}

// The built executable honours the same exit-code contract.
TEST_F(CliTest, ExecutableExitCodes) {
  const auto cfg = Config(kMinimal);
  const std::string exe = DPZV_CLI_PATH;
  const auto quiet = " > " + (dir_ / "log").string() + " 2>&1";
  int rc = std::system((exe + " run " + cfg.string() + " --out " + (dir_ / "x").string() + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 0);
  rc = std::system((exe + " budget --epsilon 1" + quiet).c_str());
  EXPECT_EQ(WEXITSTATUS(rc), 2);
}

}  // namespace
}  // namespace dpzv
