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


// Command-line front end: data generation, training, evaluation,
// prediction export, gradient checking and K-NN benchmarking.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "retro/allocator.hpp"
#include "retro/dataset.hpp"
#include "retro/gradcheck.hpp"
#include "retro/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RETRO_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      throw retro::ConfigError(std::string("RETRO_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return n;
}

/// Flags that override config-file values when given.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> levels, channels, epochs;
  std::vector<std::size_t> k;
  std::optional<double> lr;
  bool no_hs = false, no_cross_att = false, no_pos_emb = false, no_sem_gate = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Model and sampling seed");
    cmd->add_option("--levels", levels, "Pyramid levels L")->check(CLI::PositiveNumber);
    cmd->add_option("--k", k, "Neighbors per level (one value, or one per level)")->check(CLI::PositiveNumber);
    cmd->add_option("--channels", channels, "Retro-transformer width C")->check(CLI::PositiveNumber);
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-hs", no_hs, "Supervise level 1 only");
    cmd->add_flag("--no-cross-att", no_cross_att, "Replace the attended context with the compacted feature");
    cmd->add_flag("--no-pos-emb", no_pos_emb, "Drop relative position embeddings");
    cmd->add_flag("--no-sem-gate", no_sem_gate, "Sum context and compacted feature instead of gating");
  }

  retro::RunConfig resolve(retro::RunConfig base) const {
    if (!config.empty()) base = retro::load_config(config);
    if (seed) base.seed = *seed;
    if (levels) {
      if (*levels != base.levels && !base.lambdas.empty()) base.lambdas.clear();
      base.levels = *levels;
    }
    if (!k.empty()) base.k = k;
    if (channels) base.channels = *channels;
    if (epochs) base.epochs = *epochs;
    if (lr) base.lr = *lr;
    if (no_hs) base.hierarchical_supervision = false;
    if (no_cross_att) base.cross_attention = false;
    if (no_pos_emb) base.position_embedding = false;
    if (no_sem_gate) base.semantic_gate = false;
    base.validate();
    return base;
  }
};

std::string manifest_path(const std::string& data) {
  return fs::is_directory(data) ? (fs::path(data) / "manifest.json").string() : data;
}

/// Reads, label-checks and preprocesses every scene of one split.
std::vector<retro::SceneData> load_split(const retro::Manifest& m, const std::string& split,
                                         const retro::RunConfig& cfg) {
  const auto entries = m.split(split);
  if (entries.empty()) throw std::runtime_error("manifest has no '" + split + "' scenes");
  std::vector<retro::SceneData> out;
  for (const auto& e : entries) {
    const auto path = (m.root / e.file).string();
    auto cloud = retro::read_cloud(path);
    if (!cloud.labeled()) throw std::runtime_error(path + " has no labels");
    retro::check_labels(cloud, cfg.num_classes);
    out.push_back(retro::prepare_scene(cloud, cfg, e.seed, e.file));
  }
  return out;
}

void print_config(const retro::RunConfig& cfg) { std::cout << "config " << json(cfg).dump() << std::endl; }

retro::RunConfig config_for_checkpoint(const std::string& checkpoint, const std::string& config) {
  if (!config.empty()) return retro::load_config(config);
  const auto beside = fs::path(checkpoint).parent_path() / "run_config.json";
  if (!fs::exists(beside)) throw retro::ConfigError("no --config given and no run_config.json next to " + checkpoint);
  return retro::load_config(beside.string());
}

// ------------------------------------------------------------------ commands

int cmd_gen_data(const std::string& out, std::size_t train, std::size_t test, std::size_t points, double noise,
                 std::uint64_t seed) {
  retro::SceneSpec spec;
  spec.points = points;
  spec.noise_sigma = noise;
  spec.validate();
  const auto m = retro::generate_dataset(out, train, test, spec, seed);
  std::cout << json{{"out", out}, {"scenes", m.scenes.size()}, {"points", points}, {"seed", seed}}.dump() << std::endl;
  return 0;
}

int cmd_train(const Overrides& ov, const std::string& data, const std::string& out, bool resume,
              std::size_t eval_every) {
  const auto cfg = ov.resolve({});
  print_config(cfg);
  const auto manifest = retro::read_manifest(manifest_path(data));
  if (manifest.num_classes != cfg.num_classes) {
    throw retro::ConfigError("manifest has " + std::to_string(manifest.num_classes) + " classes, config " +
                             std::to_string(cfg.num_classes));
  }
  const auto train = load_split(manifest, "train", cfg);
  const auto test = manifest.split("test").empty() ? train : load_split(manifest, "test", cfg);

  fs::create_directories(out);
  const auto ckpt = (fs::path(out) / "checkpoint.bin").string();
  {
    std::ofstream os(fs::path(out) / "run_config.json");
    os << json(cfg).dump(2) << '\n';
  }

  retro::Model model(cfg);
  retro::Optimizer opt(cfg);
  std::size_t start = 0;
  if (resume) {
    start = retro::load_training_state(ckpt, model, &opt);
    std::cout << "resumed from " << ckpt << " after " << start << " epochs" << std::endl;
  }
  std::ofstream metrics(fs::path(out) / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  const std::size_t threads = worker_count();
  for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const auto stats = retro::train_epoch(train, model, opt, epoch);
    json line{{"epoch", epoch + 1}, {"per_level_loss", stats.per_level_loss}, {"loss", stats.loss}};
    if (eval_every && ((epoch + 1) % eval_every == 0 || epoch + 1 == cfg.epochs)) {
      const auto m = retro::evaluate(model, test, threads);
      line["miou"] = m.miou;
      line["acc"] = m.accuracy;
    } else {
      line["miou"] = nullptr;
      line["acc"] = nullptr;
    }
    line["seconds"] = seconds_since(t0);
    metrics << line.dump() << std::endl;
    std::cout << line.dump() << std::endl;
    retro::save_training_state(ckpt, model, opt, epoch + 1);
  }
  if (start >= cfg.epochs) retro::save_training_state(ckpt, model, opt, start);
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, std::size_t classes, const std::string& checkpoint,
             const std::string& data, const std::string& split, const std::string& config) {
  retro::Metrics m;
  if (!pred.empty() || !gt.empty()) {
    if (pred.empty() || gt.empty()) throw CLI::ValidationError("eval: --pred and --gt go together");
    const auto p = retro::read_cloud(pred), g = retro::read_cloud(gt);
    if (p.size() != g.size()) {
      throw std::runtime_error("eval: " + std::to_string(p.size()) + " predictions for " + std::to_string(g.size()) +
                               " ground-truth points");
    }
    if (!p.labeled() || !g.labeled()) throw std::runtime_error("eval: both files need labels");
    m = retro::evaluate_miou(p.labels, g.labels, classes);
  } else {
    if (checkpoint.empty() || data.empty()) throw CLI::ValidationError("eval: give --pred/--gt or --checkpoint/--data");
    const auto cfg = config_for_checkpoint(checkpoint, config);
    print_config(cfg);
    retro::Model model(cfg);
    retro::load_training_state(checkpoint, model, nullptr);
    const auto scenes = load_split(retro::read_manifest(manifest_path(data)), split, cfg);
    m = retro::evaluate(model, scenes, worker_count());
  }
  std::cout << json(m).dump() << std::endl;
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& out,
                const std::string& config, std::uint64_t scene_seed) {
  const auto cfg = config_for_checkpoint(checkpoint, config);
  print_config(cfg);
  retro::Model model(cfg);
  retro::load_training_state(checkpoint, model, nullptr);
  auto cloud = retro::read_cloud(input);
  if (cloud.empty()) throw std::runtime_error(input + " has no points");
  const auto scene = retro::prepare_scene(cloud, cfg, scene_seed, input);
  const auto outs = model.forward(scene);
  fs::create_directories(out);
  const auto stem = fs::path(input).stem().string();
  json files = json::array();
  for (std::size_t l = 0; l < outs.size(); ++l) {
    retro::PointCloud level = scene.pyramid[l].points;
    level.labels = retro::ops::argmax_rows(outs[l].logits);
    const std::vector<int> tag(level.size(), static_cast<int>(l + 1));
    const auto path = (fs::path(out) / (stem + "_level" + std::to_string(l + 1) + ".txt")).string();
    retro::write_cloud(level, path, &tag);
    files.push_back(path);
  }
  std::cout << json{{"files", files}}.dump() << std::endl;
  return 0;
}

int cmd_grad_check(std::uint64_t seed, std::size_t graphs, double step) {
  const auto r = retro::run_gradient_suite(seed, graphs, step);
  std::cout << json{{"seed", seed},
                    {"graphs", graphs},
                    {"checked", r.checked},
                    {"max_rel_error", r.max_rel_error},
                    {"worst", r.worst_param},
                    {"worst_analytic", r.worst_analytic},
                    {"worst_numeric", r.worst_numeric}}
                   .dump()
            << std::endl;
  std::cout << "max rel err " << r.max_rel_error << std::endl;
  return r.max_rel_error < 1e-5 ? 0 : 1;
}

int cmd_knn_bench(std::size_t points, std::size_t queries, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > points) throw CLI::ValidationError("knn-bench: need 1 <= k <= points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<retro::Vec3> src(points), qs(queries);
  for (auto& p : src) p = {u(rng), u(rng), u(rng)};
  for (auto& p : qs) p = {u(rng), u(rng), u(rng)};

  auto t0 = Clock::now();
  retro::KdTree tree(src);
  const double build_s = seconds_since(t0);
  t0 = Clock::now();
  const auto map = retro::knn_query(tree, qs, k);
  const double query_s = seconds_since(t0);

  t0 = Clock::now();
  std::size_t mismatches = 0;
  std::vector<std::pair<double, std::uint32_t>> all(points);
  for (std::size_t q = 0; q < queries; ++q) {
    for (std::uint32_t i = 0; i < points; ++i) all[i] = {retro::squared_distance(qs[q], src[i]), i};
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    for (std::size_t j = 0; j < k; ++j) mismatches += all[j].second != map.index[q * k + j];
  }
  const double brute_s = seconds_since(t0);
  std::cout << json{{"points", points},     {"queries", queries}, {"k", k},
                    {"build_s", build_s},   {"query_s", query_s}, {"brute_s", brute_s},
                    {"speedup", brute_s / std::max(query_s, 1e-9)}, {"mismatches", mismatches}}
                   .dump()
            << std::endl;
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  retro::keep_freed_memory();
  CLI::App app{"Retrospective feature-pyramid segmentation on point clouds"};
  app.require_subcommand(1);

  std::string out, data, pred, gt, checkpoint, input, split = "test", config;
  std::size_t train_n = 64, test_n = 16, points = 2048, classes = retro::kSceneClasses, graphs = 21;
  std::size_t queries = 2000, k = 8, eval_every = 1;
  double noise = 0.005, step = 1e-5;
  std::uint64_t seed = 0;
  bool resume = false;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic scenes and a manifest");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--train", train_n, "Training scenes");
  gen->add_option("--test", test_n, "Test scenes");
  gen->add_option("--points", points, "Points per scene")->check(CLI::Range(100, 10000000));
  gen->add_option("--noise", noise, "Gaussian jitter sigma in meters")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed, "Seed of the first scene");

  Overrides train_ov;
  auto* train = app.add_subcommand("train", "Train a model; writes checkpoint and metrics stream");
  train_ov.attach(train);
  train->add_option("--data", data, "Dataset directory or manifest.json")->required();
  train->add_option("--out", out, "Run directory")->default_val("run");
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint.bin");
  train->add_option("--eval-every", eval_every, "Evaluate every N epochs (0: never)");

  auto* eval = app.add_subcommand("eval", "Print metrics JSON");
  eval->add_option("--pred", pred, "Predicted cloud file");
  eval->add_option("--gt", gt, "Ground-truth cloud file");
  eval->add_option("--classes", classes, "Class count for --pred/--gt")->check(CLI::Range(2, 1000000));
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset directory or manifest.json");
  eval->add_option("--split", split, "Manifest split");
  eval->add_option("--config", config, "Config JSON (default: run_config.json beside the checkpoint)");

  auto* predict = app.add_subcommand("predict", "Write per-level 'x y z label level' files");
  predict->add_option("--checkpoint", checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--input", input, "Cloud file")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out, "Output directory")->default_val("predictions");
  predict->add_option("--config", config, "Config JSON (default: run_config.json beside the checkpoint)");
  predict->add_option("--seed", seed, "Pyramid sampling seed for the input");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of random graphs");
  grad->add_option("--seed", seed, "Seed");
  grad->add_option("--graphs", graphs, "Number of random graphs")->check(CLI::PositiveNumber);
  grad->add_option("--step", step, "Central-difference step")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("knn-bench", "Time kd-tree build/query against brute force");
  bench->add_option("--points", points, "Source points")->check(CLI::PositiveNumber);
  bench->add_option("--queries", queries, "Query points");
  bench->add_option("--k", k, "Neighbors")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(out, train_n, test_n, points, noise, seed);
    if (*train) return cmd_train(train_ov, data, out, resume, eval_every);
    if (*eval) return cmd_eval(pred, gt, classes, checkpoint, data, split, config);
    if (*predict) return cmd_predict(checkpoint, input, out, config, seed);
    if (*grad) return cmd_grad_check(seed, graphs, step);
    if (*bench) return cmd_knn_bench(points, queries, k, seed);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
