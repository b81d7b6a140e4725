#pragma once

// Training objectives.
//
//   total   = emotion + w_kp * keypoint
//   emotion = nmse + w_C * cross_entropy + w_RANK * rank_surrogate
//
// The exact pairwise rank count has zero gradient almost everywhere, so it is
// reported as a metric (rank_violations) while training uses the hinge form.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kavan/error.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

inline constexpr std::size_t kEmotionCount = 17;
inline constexpr std::size_t kCategoryCount = 4;

struct LossWeights {
  double w_kp = 1.0;
  double w_C = 0.3;
  double w_RANK = 0.1;
  double rank_margin = 0.0;

  void validate() const {
    for (double w : {w_kp, w_C, w_RANK, rank_margin})
      if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
};

struct EmotionTarget {
  std::vector<double> intensities;  // in [-1, 1]
  int category = 0;
};

inline double population_variance(std::span<const double> v) {
  double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

// Mean squared error over the population variance of the target.
inline Tensor nmse(const Tensor& pred, std::span<const double> target) {
  if (pred.numel() != target.size())
    throw DimensionError("nmse: prediction has " + std::to_string(pred.numel()) + " values, target " +
                         std::to_string(target.size()));
  double var = population_variance(target);
  if (!(var > 1e-12)) throw ContractError("nmse: degenerate target (variance " + std::to_string(var) + ")");
  Tensor t = Tensor::from(pred.shape(), {target.begin(), target.end()});
  return scale(mean(square(sub(pred, t))), 1.0 / var);
}

inline Tensor cross_entropy(const Tensor& logits, int category) {
  if (category < 0 || static_cast<std::size_t>(category) >= logits.numel())
    throw ContractError("cross_entropy: category " + std::to_string(category) + " outside [0, " +
                        std::to_string(logits.numel()) + ")");
  return neg(element(log_softmax(logits), static_cast<std::size_t>(category)));
}

// Emotion indices sorted by descending target intensity, ties by index.
inline std::vector<std::size_t> target_order(std::span<const double> target) {
  std::vector<std::size_t> order(target.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return target[a] > target[b]; });
  return order;
}

// Pairs (k < l) in target-descending order that the prediction puts strictly
// the other way round.
inline std::size_t rank_violations(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DimensionError("rank_violations: length mismatch");
  if (pred.size() < 2) throw ContractError("rank_violations: need at least two emotions");
  auto order = target_order(target);
  std::size_t count = 0;
  for (std::size_t k = 0; k < order.size(); ++k)
    for (std::size_t l = k + 1; l < order.size(); ++l)
      if (pred[order[k]] < pred[order[l]]) ++count;
  return count;
}

// Σ over target-ordered pairs (k < l) of max(0, margin + pred_l - pred_k).
inline Tensor rank_surrogate(const Tensor& pred, std::span<const double> target, double margin) {
  if (pred.numel() != target.size()) throw DimensionError("rank_surrogate: length mismatch");
  if (pred.numel() < 2) throw ContractError("rank_surrogate: need at least two emotions");
  auto order = target_order(target);
  auto p = pred.data();
  double total = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k)
    for (std::size_t l = k + 1; l < order.size(); ++l)
      total += std::max(0.0, margin + p[order[l]] - p[order[k]]);
  return make_op({1}, {total}, {pred}, [order, margin](detail::Node& self) {
    detail::Node& pn = *self.parents[0];
    auto* g = detail::grad_of(pn);
    if (!g) return;
    const double up = self.grad[0];
    for (std::size_t k = 0; k < order.size(); ++k)
      for (std::size_t l = k + 1; l < order.size(); ++l)
        if (margin + pn.value[order[l]] - pn.value[order[k]] > 0.0) {
          (*g)[order[l]] += up;
          (*g)[order[k]] -= up;
        }
  });
}

// Σ_t Σ_k (M_t(k) - mask_t(k))²
inline Tensor keypoint_loss(std::span<const Tensor> masks, std::span<const SupervisionHeatmap> heatmaps) {
  if (masks.size() != heatmaps.size())
    throw ContractError("keypoint_loss: " + std::to_string(masks.size()) + " masks vs " +
                        std::to_string(heatmaps.size()) + " heatmaps");
  if (masks.empty()) throw ContractError("keypoint_loss: no frames");
  std::vector<Tensor> per_frame;
  per_frame.reserve(masks.size());
  for (std::size_t t = 0; t < masks.size(); ++t) {
    Tensor target = flatten(heatmaps[t].grid);
    if (target.numel() != masks[t].numel())
      throw DimensionError("keypoint_loss: mask " + shape_str(masks[t].shape()) + " vs heatmap " +
                           shape_str(heatmaps[t].grid.shape()));
    per_frame.push_back(sum(square(sub(flatten(masks[t]), target))));
  }
  return sum(concat(per_frame));
}

struct EmotionLossTerms {
  Tensor regression;
  Tensor classification;
  Tensor ranking;
  Tensor total;
};

inline EmotionLossTerms emotion_loss_terms(const Tensor& pred_intensities, const Tensor& logits,
                                           const EmotionTarget& target, const LossWeights& w) {
  EmotionLossTerms t;
  t.regression = nmse(pred_intensities, target.intensities);
  t.classification = cross_entropy(logits, target.category);
  t.ranking = rank_surrogate(pred_intensities, target.intensities, w.rank_margin);
  t.total = add(add(t.regression, scale(t.classification, w.w_C)), scale(t.ranking, w.w_RANK));
  return t;
}

inline Tensor emotion_loss(const Tensor& pred_intensities, const Tensor& logits, const EmotionTarget& target,
                           const LossWeights& w) {
  return emotion_loss_terms(pred_intensities, logits, target, w).total;
}

inline Tensor total_loss(const Tensor& emotion, const Tensor& kp, const LossWeights& w) {
  return add(emotion, scale(kp, w.w_kp));
}

}  // namespace kavan
