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

#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "retro/backbone.hpp"
#include "retro/checkpoint.hpp"
#include "retro/config.hpp"
#include "retro/metrics.hpp"
#include "retro/retro_fpn.hpp"

namespace retro {

/// A scene with its pyramid and network input precomputed.
struct SceneData {
  std::string id;
  Pyramid pyramid;
  Tensor input;
};

inline SceneData prepare_scene(const PointCloud& cloud, const RunConfig& cfg, std::uint64_t scene_seed,
                               std::string id = {}) {
  SceneData s;
  s.id = std::move(id);
  s.pyramid = build_pyramid(cloud, cfg.pyramid(scene_seed));
  s.input = input_features(cloud);
  return s;
}

struct Model {
  RunConfig cfg;
  BackboneParams backbone;
  std::vector<RetroParams> retro;

  explicit Model(const RunConfig& config) : cfg(config) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    backbone = BackboneParams(3, cfg.region_width(), cfg.levels, rng);
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      const std::size_t source = (l + 1 == cfg.levels) ? cfg.region_width() : cfg.channels;
      retro.emplace_back(cfg.region_width(), source, cfg.channels, cfg.num_classes, rng);
    }
  }

  nn::ParamList parameters() const {
    nn::ParamList out;
    backbone.collect(out);
    for (std::size_t l = 0; l < retro.size(); ++l) retro[l].collect("retro/level_" + std::to_string(l + 1) + "/", out);
    return out;
  }

  std::vector<LevelOutput> forward(const SceneData& scene) const {
    auto enc = encode(scene.pyramid, scene.input, backbone);
    auto feats = decode(scene.pyramid, enc, backbone);
    return retro_forward(scene.pyramid, feats, retro, cfg.retro_options());
  }
};

/// Per-level cross-entropy terms and their weighted sum.
struct LossTerms {
  Tensor total;
  std::vector<Tensor> per_level;
};

/// sum_l lambda_l * CE(logits_l, labels_l). Levels with lambda_l == 0 add
/// nothing; when every weight is zero the result is a constant 0.
inline Tensor hierarchical_loss(const std::vector<Tensor>& logits, const std::vector<std::span<const int>>& labels,
                                std::span<const double> lambdas) {
  if (logits.size() != labels.size() || logits.size() != lambdas.size()) {
    throw ArgumentError("hierarchical_loss: " + std::to_string(logits.size()) + " logit sets, " +
                        std::to_string(labels.size()) + " label sets, " + std::to_string(lambdas.size()) + " weights");
  }
  Tensor total;
  for (std::size_t l = 0; l < logits.size(); ++l) {
    if (lambdas[l] < 0.0) throw ArgumentError("hierarchical_loss: negative weight");
    if (lambdas[l] == 0.0) continue;
    Tensor term = ops::scale(ops::cross_entropy_mean(logits[l], labels[l], kIgnoreLabel), lambdas[l]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

class Optimizer {
 public:
  explicit Optimizer(const RunConfig& cfg) : cfg_(cfg) {}

  std::uint64_t steps() const { return steps_; }

  /// One update from the current gradients, which are zeroed afterwards.
  /// Parameters without a gradient buffer are treated as having zero gradient.
  void step(const nn::ParamList& params) {
    for (const auto& [name, t] : params) {
      for (double g : t.grad()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name);
      }
    }
    ++steps_;
    const bool adam = cfg_.optimizer == "adam";
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (const auto& [name, t] : params) {
      Tensor param = t;
      auto w = param.mutable_values();
      auto g = param.grad();
      auto& m = first_[name];
      m.resize(w.size(), 0.0);
      if (adam) {
        auto& v = second_[name];
        v.resize(w.size(), 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = (g.empty() ? 0.0 : g[i]) + cfg_.weight_decay * w[i];
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
          w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps);
        }
      } else {
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = (g.empty() ? 0.0 : g[i]) + cfg_.weight_decay * w[i];
          m[i] = cfg_.momentum * m[i] + gi;
          w[i] -= cfg_.lr * m[i];
        }
      }
      param.zero_grad();
    }
  }

  void save_state(TensorMap& out) const {
    out["optim/step"] = TensorRecord{{1}, {static_cast<double>(steps_)}};
    for (const auto& [name, m] : first_) out["optim/m/" + name] = TensorRecord{{m.size()}, m};
    for (const auto& [name, v] : second_) out["optim/v/" + name] = TensorRecord{{v.size()}, v};
  }

  void load_state(const TensorMap& in) {
    first_.clear();
    second_.clear();
    steps_ = 0;
    for (const auto& [key, rec] : in) {
      if (key == "optim/step") {
        steps_ = static_cast<std::uint64_t>(rec.values.at(0));
      } else if (key.rfind("optim/m/", 0) == 0) {
        first_[key.substr(8)] = rec.values;
      } else if (key.rfind("optim/v/", 0) == 0) {
        second_[key.substr(8)] = rec.values;
      }
    }
  }

 private:
  RunConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::vector<double>> first_, second_;
};

/// Scene visiting order for an epoch, a function of (seed, epoch) only.
inline std::vector<std::size_t> epoch_order(std::size_t scenes, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(scenes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 7919ULL + epoch + 1);
  for (std::size_t i = scenes; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

struct EpochStats {
  std::size_t epoch = 0;
  std::vector<double> per_level_loss;  // unweighted CE, averaged over scenes
  double loss = 0.0;                   // weighted objective, averaged over scenes
};

inline std::vector<std::span<const int>> level_labels(const SceneData& scene) {
  std::vector<std::span<const int>> out;
  for (const auto& lvl : scene.pyramid) out.emplace_back(lvl.points.labels);
  return out;
}

/// One pass over `scenes`: forward, hierarchical loss, backward and an
/// optimizer step per batch of cfg.batch_scenes scenes.
inline EpochStats train_epoch(const std::vector<SceneData>& scenes, Model& model, Optimizer& opt, std::size_t epoch) {
  if (scenes.empty()) throw ArgumentError("train_epoch: no scenes");
  const auto& cfg = model.cfg;
  const auto lambdas = cfg.effective_lambdas();
  const auto params = model.parameters();
  const auto order = epoch_order(scenes.size(), cfg.seed, epoch);

  EpochStats stats;
  stats.epoch = epoch;
  stats.per_level_loss.assign(cfg.levels, 0.0);
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_scenes) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_scenes);
    Tensor batch_loss;
    for (std::size_t b = start; b < end; ++b) {
      const auto& scene = scenes[order[b]];
      try {
        auto outs = model.forward(scene);
        std::vector<Tensor> logits;
        for (auto& o : outs) logits.push_back(o.logits);
        const auto labels = level_labels(scene);
        for (std::size_t l = 0; l < logits.size(); ++l) {
          stats.per_level_loss[l] += ops::cross_entropy_mean(logits[l], labels[l], kIgnoreLabel).item();
        }
        Tensor loss = ops::scale(hierarchical_loss(logits, labels, lambdas), 1.0 / static_cast<double>(end - start));
        stats.loss += loss.item() * static_cast<double>(end - start);
        batch_loss = batch_loss.defined() ? ops::add(batch_loss, loss) : loss;
      } catch (const std::exception& e) {
        throw std::runtime_error("scene " + (scene.id.empty() ? std::to_string(order[b]) : scene.id) + ": " + e.what());
      }
    }
    batch_loss.backward();
    opt.step(params);
  }
  for (auto& v : stats.per_level_loss) v /= static_cast<double>(scenes.size());
  stats.loss /= static_cast<double>(scenes.size());
  return stats;
}

/// Level-1 predictions for one scene.
inline std::vector<int> predict(const Model& model, const SceneData& scene) {
  return ops::argmax_rows(model.forward(scene).front().logits);
}

/// Level-1 metrics over `scenes`, fanned out over up to `threads` workers.
inline Metrics evaluate(const Model& model, const std::vector<SceneData>& scenes, std::size_t threads = 1) {
  if (scenes.empty()) throw ArgumentError("evaluate: no scenes");
  threads = std::max<std::size_t>(1, std::min(threads, scenes.size()));
  auto work = [&](std::size_t first) {
    ConfusionMatrix cm(model.cfg.num_classes);
    for (std::size_t s = first; s < scenes.size(); s += threads) {
      cm.add(predict(model, scenes[s]), scenes[s].pyramid.front().points.labels);
    }
    return cm;
  };
  ConfusionMatrix total(model.cfg.num_classes);
  if (threads == 1) {
    total = work(0);
  } else {
    std::vector<std::future<ConfusionMatrix>> parts;
    for (std::size_t t = 0; t < threads; ++t) parts.push_back(std::async(std::launch::async, work, t));
    for (auto& p : parts) total.merge(p.get());
  }
  return total.metrics();
}

/// Parameters, optimizer state and the number of finished epochs.
inline void save_training_state(const std::string& path, const Model& model, const Optimizer& opt,
                                std::size_t epochs_done) {
  TensorMap state = nn::to_tensor_map(model.parameters());
  opt.save_state(state);
  state["train/epochs_done"] = TensorRecord{{1}, {static_cast<double>(epochs_done)}};
  write_checkpoint(path, state);
}

/// Returns the number of finished epochs stored in the checkpoint (0 if absent).
inline std::size_t load_training_state(const std::string& path, Model& model, Optimizer* opt) {
  const TensorMap state = read_checkpoint(path);
  nn::load_tensor_map(state, model.parameters());
  if (opt) opt->load_state(state);
  auto it = state.find("train/epochs_done");
  return it == state.end() ? 0 : static_cast<std::size_t>(it->second.values.at(0));
}

}  // namespace retro
