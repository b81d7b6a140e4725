#pragma once

// Full network: patch encoder -> attended temporal module -> two heads.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "kavan/attention.hpp"
#include "kavan/data.hpp"
#include "kavan/error.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/losses.hpp"
#include "kavan/random.hpp"
#include "kavan/recurrent.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

enum class ModelKind { plain_lstm, hs_lstm };

struct ModelConfig {
  ModelKind kind = ModelKind::hs_lstm;
  HsLstmConfig hs{};
  std::size_t feature_dim = 64;  // D
  std::size_t hidden_dim = 64;   // d
  AttentionMode attention = AttentionMode::keypoint;
  std::size_t image_side = 64;   // encoder input; 0 for precomputed features

  int frames() const { return hs.frames; }
  // The temporal layout actually run: plain_lstm is a single tier.
  HsLstmConfig effective_hs() const {
    if (kind == ModelKind::plain_lstm) return {1, hs.frames, hs.frames};
    return hs;
  }
  void validate() const {
    effective_hs().validate();
    if (feature_dim == 0 || hidden_dim == 0) throw ConfigError("model dimensions must be positive");
  }
};

struct KavanParams {
  EncoderParams encoder;  // undefined tensors when features are precomputed
  TemporalParams temporal;
  Tensor reg_weight;  // [d x 17]
  Tensor reg_bias;    // [17]
  Tensor cls_weight;  // [d x 4]
  Tensor cls_bias;    // [4]

  static KavanParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    KavanParams p;
    if (cfg.image_side > 0) {
      std::size_t mb = max_bin(cfg.image_side);
      p.encoder = EncoderParams::init(mb * mb, cfg.feature_dim, rng);
    }
    p.temporal = TemporalParams::init(cfg.effective_hs(), cfg.feature_dim, cfg.hidden_dim, rng);
    double a = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
    p.reg_weight = rng.uniform_tensor({cfg.hidden_dim, kEmotionCount}, -a, a);
    p.reg_bias = Tensor::zeros({kEmotionCount}, true);
    p.cls_weight = rng.uniform_tensor({cfg.hidden_dim, kCategoryCount}, -a, a);
    p.cls_bias = Tensor::zeros({kCategoryCount}, true);
    return p;
  }

  // Stable name -> tensor listing of every learnable tensor.
  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto put = [&](std::string name, const Tensor& t) {
      if (t.defined()) out.emplace_back(std::move(name), t);
    };
    put("encoder.weight", encoder.weight);
    put("encoder.bias", encoder.bias);
    const auto& a = temporal.attention;
    put("attention.v", a.v);
    put("attention.A_h", a.A_h);
    put("attention.A_c", a.A_c);
    put("attention.A_H", a.A_H);
    put("attention.b", a.b);
    put("attention.w_res", a.w_res);
    for (std::size_t l = 0; l < temporal.tiers.size(); ++l) {
      put("tier" + std::to_string(l + 1) + ".weight", temporal.tiers[l].weight);
      put("tier" + std::to_string(l + 1) + ".bias", temporal.tiers[l].bias);
    }
    put("head.reg_weight", reg_weight);
    put("head.reg_bias", reg_bias);
    put("head.cls_weight", cls_weight);
    put("head.cls_bias", cls_bias);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named()) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : named()) const_cast<Tensor&>(t).zero_grad();
  }

  // Deep copy (fresh leaves).
  KavanParams clone() const {
    KavanParams p = *this;
    auto cp = [](Tensor& t) {
      if (t.defined()) t = t.clone();
    };
    cp(p.encoder.weight), cp(p.encoder.bias);
    auto& a = p.temporal.attention;
    cp(a.v), cp(a.A_h), cp(a.A_c), cp(a.A_H), cp(a.b), cp(a.w_res);
    for (auto& t : p.temporal.tiers) cp(t.weight), cp(t.bias);
    cp(p.reg_weight), cp(p.reg_bias), cp(p.cls_weight), cp(p.cls_bias);
    return p;
  }
};

// Per-sample inputs that do not depend on parameters: patch matrices (or
// feature blocks) and supervision heatmaps for every frame.
struct PreparedSample {
  const GifSample* source = nullptr;
  std::vector<Tensor> inputs;  // [49 x patch] patches or [49 x D] features
  std::vector<SupervisionHeatmap> heatmaps;
  EmotionTarget target;
};

inline PreparedSample prepare(const GifSample& sample, const EmotionTaxonomy& taxonomy,
                              const HeatmapConfig& heatmap = {}) {
  sample.validate();
  PreparedSample p;
  p.source = &sample;
  p.target = sample.target(taxonomy);
  for (std::size_t f = 0; f < sample.frame_count(); ++f) {
    if (sample.precomputed())
      p.inputs.push_back(Tensor::matrix(kGridCells, sample.feature_dim, sample.features[f]));
    else
      p.inputs.push_back(patch_matrix(sample.images[f]));
  }
  p.heatmaps = build_supervision(sample.keypoints, heatmap);
  return p;
}

struct ModelOutput {
  Tensor intensities;  // [17], tanh-squashed
  Tensor logits;       // [4]
  TemporalOutput temporal;
  std::vector<SupervisionHeatmap> heatmaps;  // targets of the sampled frames
};

inline ModelOutput forward(const KavanParams& params, const ModelConfig& cfg, const PreparedSample& sample,
                           std::span<const std::size_t> frame_indices) {
  std::vector<FeatureBlock> blocks;
  ModelOutput out;
  for (auto idx : frame_indices) {
    const Tensor& in = sample.inputs.at(idx);
    if (cfg.image_side > 0) {
      if (!params.encoder.weight.defined()) throw ConfigError("model expects raw frames but has no encoder");
      blocks.push_back(encode_patches(in, params.encoder, static_cast<int>(idx)));
    } else {
      if (in.dim(1) != cfg.feature_dim)
        throw DimensionError("precomputed features have " + std::to_string(in.dim(1)) + " channels, model expects " +
                             std::to_string(cfg.feature_dim));
      blocks.push_back({in, static_cast<int>(idx)});
    }
    out.heatmaps.push_back(sample.heatmaps.at(idx));
  }
  if (cfg.kind == ModelKind::plain_lstm)
    out.temporal = plain_lstm_forward(blocks, out.heatmaps, params.temporal.attention, params.temporal.tiers.at(0),
                                      cfg.attention);
  else
    out.temporal = hs_forward(blocks, out.heatmaps, params.temporal, cfg.hs, cfg.attention);
  Tensor h = reshape(out.temporal.gif_repr, {1, cfg.hidden_dim});
  out.intensities = tanh(add(reshape(matmul(h, params.reg_weight), {kEmotionCount}), params.reg_bias));
  out.logits = add(reshape(matmul(h, params.cls_weight), {kCategoryCount}), params.cls_bias);
  return out;
}

struct LossTerms {
  Tensor regression;
  Tensor classification;
  Tensor ranking;
  Tensor emotion;
  Tensor keypoint;
  Tensor total;
};

inline LossTerms compute_losses(const ModelOutput& out, const EmotionTarget& target, const LossWeights& w) {
  auto e = emotion_loss_terms(out.intensities, out.logits, target, w);
  LossTerms t{e.regression, e.classification, e.ranking, e.total, {}, {}};
  t.keypoint = keypoint_loss(out.temporal.masks, out.heatmaps);
  t.total = total_loss(t.emotion, t.keypoint, w);
  return t;
}

}  // namespace kavan
