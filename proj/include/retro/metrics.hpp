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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "retro/errors.hpp"
#include "retro/geometry.hpp"

namespace retro {

struct Metrics {
  // IoU per class; nullopt for classes absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_level_loss;
};

inline void to_json(nlohmann::json& j, const Metrics& m) {
  nlohmann::json iou = nlohmann::json::array();
  for (const auto& v : m.per_class_iou) iou.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  j = {{"per_class_iou", iou}, {"miou", m.miou}, {"acc", m.accuracy}, {"per_level_loss", m.per_level_loss}};
}

/// counts[gt * classes + pred]. Merging is plain addition, so partial
/// matrices from independent workers combine in any order.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t count(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void add(std::span<const int> pred, std::span<const int> gt, int ignore = kIgnoreLabel) {
    if (pred.size() != gt.size()) {
      throw ArgumentError("confusion: " + std::to_string(pred.size()) + " predictions for " +
                          std::to_string(gt.size()) + " labels");
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      check(gt[i], "ground-truth");
      check(pred[i], "predicted");
      ++counts_[static_cast<std::size_t>(gt[i]) * classes_ + static_cast<std::size_t>(pred[i])];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ArgumentError("confusion: class count mismatch in merge");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  Metrics metrics() const {
    const std::uint64_t n = total();
    if (n == 0) throw ArgumentError("evaluation has no points left after ignore filtering");
    Metrics m;
    m.per_class_iou.resize(classes_);
    std::uint64_t correct = 0;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
      const std::uint64_t tp = count(c, c);
      correct += tp;
      std::uint64_t fp = 0, fn = 0;
      for (std::size_t o = 0; o < classes_; ++o) {
        if (o == c) continue;
        fp += count(o, c);
        fn += count(c, o);
      }
      const std::uint64_t denom = tp + fp + fn;
      if (denom == 0) continue;
      const double iou = static_cast<double>(tp) / static_cast<double>(denom);
      m.per_class_iou[c] = iou;
      sum += iou;
      ++used;
    }
    m.miou = sum / static_cast<double>(used);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return m;
  }

 private:
  void check(int label, const char* what) const {
    if (label < 0 || static_cast<std::size_t>(label) >= classes_) {
      throw IndexError(std::string(what) + " label " + std::to_string(label) + " outside [0," +
                       std::to_string(classes_) + ")");
    }
  }

  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// IoU_c = TP / (TP + FP + FN) over non-ignored points; mIoU averages the
/// classes that occur in the prediction or the ground truth.
inline Metrics evaluate_miou(std::span<const int> pred, std::span<const int> gt, std::size_t num_classes,
                             int ignore = kIgnoreLabel) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt, ignore);
  return cm.metrics();
}

}  // namespace retro
