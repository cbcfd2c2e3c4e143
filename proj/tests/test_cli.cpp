// Copyright 2026 The retrofpn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "retro/dataset.hpp"
#include "support/process.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli(const std::string& args) { return process::quote(RETRO_CLI_PATH) + " " + args; }

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("retro_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string arg(const fs::path& p) { return process::quote(p.string()); }

/// Last output line that parses as a JSON object.
json last_json(const std::string& output) {
  std::istringstream is(output);
  json found;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line.front() != '{') continue;
    try {
      found = json::parse(line);
    } catch (const json::exception&) {
    }
  }
  return found;
}

/// metrics.jsonl records without the wall-clock field.
std::vector<json> metrics_lines(const fs::path& run) {
  std::ifstream is(run / "metrics.jsonl");
  std::vector<json> out;
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    json j = json::parse(line);
    j.erase("seconds");
    out.push_back(j);
  }
  return out;
}

const std::string kSmallModel = " --levels 2 --k 4 --channels 4";

void make_data(const fs::path& dir, int train = 2, int test = 1) {
  const auto r = process::run(cli("gen-data --out " + arg(dir) + " --train " + std::to_string(train) + " --test " +
                                  std::to_string(test) + " --points 200 --seed 3"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
}

}  // namespace

TEST(Cli, EvalOfIdenticalFilesIsPerfect) {
  const auto dir = fresh_dir("eval");
  retro::SceneSpec spec;
  spec.points = 300;
  retro::write_cloud(retro::generate_scene(spec), (dir / "gt.txt").string());
  const auto r = process::run(cli("eval --pred " + arg(dir / "gt.txt") + " --gt " + arg(dir / "gt.txt") + " --classes 5"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json m = last_json(r.output);
  EXPECT_EQ(m.at("miou").get<double>(), 1.0);
  EXPECT_EQ(m.at("acc").get<double>(), 1.0);
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(process::run(cli("train --bogus-flag")).exit_code, 2);
  EXPECT_EQ(process::run(cli("no-such-command")).exit_code, 2);
  EXPECT_EQ(process::run(cli("train")).exit_code, 2);  // --data is required
  EXPECT_EQ(process::run(cli("--help")).exit_code, 0);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const auto dir = fresh_dir("errors");
  std::ofstream(dir / "bad.txt") << "1 2\n";
  const auto r = process::run(cli("eval --pred " + arg(dir / "bad.txt") + " --gt " + arg(dir / "bad.txt") + " --classes 5"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("line 1"), std::string::npos) << r.output;
  fs::remove_all(dir);
}

TEST(Cli, GradCheckPasses) {
  const auto r = process::run(cli("grad-check --seed 7"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const json j = last_json(r.output);
  EXPECT_LT(j.at("max_rel_error").get<double>(), 1e-5);
}

TEST(Cli, KnnBenchAgreesWithBruteForce) {
  const auto r = process::run(cli("knn-bench --points 3000 --queries 200 --k 8 --seed 1"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(last_json(r.output).at("mismatches").get<int>(), 0);
}

TEST(Cli, TrainPredictEvalFlow) {
  const auto dir = fresh_dir("flow");
  make_data(dir / "data");
  const auto run = dir / "run";
  auto r = process::run(cli("train --data " + arg(dir / "data") + " --out " + arg(run) + kSmallModel +
                            " --epochs 2 --seed 1"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("config {"), std::string::npos);
  ASSERT_TRUE(fs::exists(run / "checkpoint.bin"));
  ASSERT_TRUE(fs::exists(run / "run_config.json"));
  const auto lines = metrics_lines(run);
  ASSERT_EQ(lines.size(), 2u);
  for (const auto& key : {"epoch", "per_level_loss", "loss", "miou", "acc"}) EXPECT_TRUE(lines[1].contains(key)) << key;
  EXPECT_EQ(lines[1].at("per_level_loss").size(), 2u);

  const auto scene = dir / "data" / "test_000.txt";
  r = process::run(cli("predict --checkpoint " + arg(run / "checkpoint.bin") + " --input " + arg(scene) + " --out " +
                       arg(dir / "pred")));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  for (int l = 1; l <= 2; ++l) {
    std::vector<int> levels;
    const auto cloud = retro::read_cloud((dir / "pred" / ("test_000_level" + std::to_string(l) + ".txt")).string(), &levels);
    EXPECT_GT(cloud.size(), 0u);
    EXPECT_TRUE(std::all_of(levels.begin(), levels.end(), [&](int v) { return v == l; }));
  }
  const auto level1 = retro::read_cloud((dir / "pred" / "test_000_level1.txt").string());
  EXPECT_EQ(level1.size(), retro::read_cloud(scene.string()).size());

  r = process::run(cli("eval --pred " + arg(dir / "pred" / "test_000_level1.txt") + " --gt " + arg(scene) +
                       " --classes 5"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const double direct = last_json(r.output).at("miou").get<double>();
  r = process::run(cli("eval --checkpoint " + arg(run / "checkpoint.bin") + " --data " + arg(dir / "data")));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NEAR(last_json(r.output).at("miou").get<double>(), direct, 1e-12);
  fs::remove_all(dir);
}

TEST(Cli, ResumeContinuesTheSameTrajectory) {
  const auto dir = fresh_dir("resume");
  make_data(dir / "data");
  const std::string base = "train --data " + arg(dir / "data") + kSmallModel + " --seed 2";
  ASSERT_EQ(process::run(cli(base + " --out " + arg(dir / "full") + " --epochs 3")).exit_code, 0);
  ASSERT_EQ(process::run(cli(base + " --out " + arg(dir / "split") + " --epochs 2")).exit_code, 0);
  const auto r = process::run(cli(base + " --out " + arg(dir / "split") + " --epochs 3 --resume"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("after 2 epochs"), std::string::npos) << r.output;
  EXPECT_EQ(metrics_lines(dir / "split"), metrics_lines(dir / "full"));
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileAndFlagOverrides) {
  const auto dir = fresh_dir("config");
  make_data(dir / "data", 1, 0);
  std::ofstream(dir / "cfg.json") << R"({"levels": 2, "k": [3], "channels": 4, "epochs": 1, "lr": 0.005})";
  auto r = process::run(cli("train --data " + arg(dir / "data") + " --out " + arg(dir / "run") + " --config " +
                            arg(dir / "cfg.json") + " --channels 6"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  std::ifstream is(dir / "run" / "run_config.json");
  const json cfg = json::parse(is);
  EXPECT_EQ(cfg.at("channels").get<int>(), 6);
  EXPECT_EQ(cfg.at("lr").get<double>(), 0.005);
  std::ofstream(dir / "bad.json") << R"({"chanels": 4})";
  r = process::run(cli("train --data " + arg(dir / "data") + " --out " + arg(dir / "run2") + " --config " +
                       arg(dir / "bad.json")));
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("chanels"), std::string::npos) << r.output;
  fs::remove_all(dir);
}
