#pragma once

// LSTM cell and the hierarchical segment LSTM.
//
// Hierarchy layout for `tiers` = n and `node_size` = s over T frames:
//   * tiers 1..n-1 split the frames into T/s segments. Each segment runs its
//     own chain from a zero state over spatially mean-pooled features,
//     concatenated with the representations of the same segment from every
//     coarser tier. The final hidden state is the segment representation.
//   * tier n runs one chain over all T frames. Its inputs are attention-pooled
//     features concatenated with the coarser representations of the enclosing
//     segment; the attention scores see the sum of those representations.
//   * the last hidden state of tier n is the GIF representation.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kavan/attention.hpp"
#include "kavan/error.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/random.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

// Fused gate transform; columns are laid out as (i, f, o, g), each d wide.
struct LstmParams {
  Tensor weight;  // [(d + input) x 4d], rows ordered (h, x)
  Tensor bias;    // [4d]

  std::size_t hidden() const { return bias.numel() / 4; }
  std::size_t input() const { return weight.dim(0) - hidden(); }

  static LstmParams init(std::size_t input, std::size_t hidden, Rng& rng) {
    double a = 1.0 / std::sqrt(static_cast<double>(hidden));
    return {rng.uniform_tensor({hidden + input, 4 * hidden}, -a, a), Tensor::zeros({4 * hidden}, true)};
  }
};

struct LstmState {
  Tensor h;
  Tensor c;

  static LstmState zeros(std::size_t hidden) { return {Tensor::zeros({hidden}), Tensor::zeros({hidden})}; }
};

inline LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& params) {
  const std::size_t d = params.hidden();
  if (state.h.numel() != d || state.c.numel() != d)
    throw DimensionError("lstm_step: state size " + std::to_string(state.h.numel()) + " vs hidden " + std::to_string(d));
  if (x.numel() != params.input())
    throw DimensionError("lstm_step: input " + shape_str(x.shape()) + " vs expected width " +
                         std::to_string(params.input()));
  Tensor joined = reshape(concat({state.h, x}), {1, d + x.numel()});
  Tensor gates = add(reshape(matmul(joined, params.weight), {4 * d}), params.bias);
  Tensor i = sigmoid(slice(gates, 0, d));
  Tensor f = sigmoid(slice(gates, d, d));
  Tensor o = sigmoid(slice(gates, 2 * d, d));
  Tensor g = tanh(slice(gates, 3 * d, d));
  Tensor c = add(mul(f, state.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

struct HsLstmConfig {
  int tiers = 2;
  int node_size = 4;
  int frames = 8;

  int segments() const { return frames / node_size; }

  void validate() const {
    if (tiers < 1) throw ConfigError("tiers must be at least 1");
    if (node_size < 1) throw ConfigError("node_size must be at least 1");
    if (frames < 1) throw ConfigError("frames must be at least 1");
    if (frames % node_size != 0)
      throw ConfigError("frames (" + std::to_string(frames) + ") not divisible by node_size (" +
                        std::to_string(node_size) + ")");
  }
};

struct SegmentRepresentation {
  int tier = 0;     // 1-based
  int segment = 0;  // 0-based
  Tensor vector;
};

enum class AttentionMode {
  keypoint,  // learned scores (supervised through the keypoint loss)
  uniform,   // fixed 1/49 mask; the no-attention ablation
};

// One LstmParams per tier (tier l takes D + (l-1)·d inputs).
struct TemporalParams {
  AttentionParams attention;
  std::vector<LstmParams> tiers;

  static TemporalParams init(const HsLstmConfig& cfg, std::size_t channels, std::size_t hidden, Rng& rng) {
    cfg.validate();
    TemporalParams p;
    p.attention = AttentionParams::init(hidden, channels, cfg.tiers > 1, rng);
    for (int l = 0; l < cfg.tiers; ++l)
      p.tiers.push_back(LstmParams::init(channels + static_cast<std::size_t>(l) * hidden, hidden, rng));
    return p;
  }
};

struct TemporalOutput {
  Tensor gif_repr;
  std::vector<Tensor> masks;
  std::vector<SegmentRepresentation> segments;
};

namespace detail {

inline Tensor attend(const FeatureBlock& block, const Tensor& h_prev, const AttentionParams& attn,
                     const std::optional<Tensor>& context, AttentionMode mode) {
  if (mode == AttentionMode::uniform) return uniform_mask(block.cells.dim(0));
  return mask(score(h_prev, block, attn, context));
}

inline void check_lengths(std::size_t blocks, std::size_t supervision) {
  if (blocks == 0) throw ConfigError("temporal forward: no frames");
  if (blocks != supervision)
    throw ConfigError("temporal forward: " + std::to_string(blocks) + " feature blocks but " +
                      std::to_string(supervision) + " supervision heatmaps");
}

}  // namespace detail

inline TemporalOutput hs_forward(std::span<const FeatureBlock> blocks, std::span<const SupervisionHeatmap> supervision,
                                 const TemporalParams& params, const HsLstmConfig& cfg,
                                 AttentionMode mode = AttentionMode::keypoint) {
  cfg.validate();
  detail::check_lengths(blocks.size(), supervision.size());
  if (blocks.size() != static_cast<std::size_t>(cfg.frames))
    throw ConfigError("hs_forward: configured for " + std::to_string(cfg.frames) + " frames, got " +
                      std::to_string(blocks.size()));
  if (params.tiers.size() != static_cast<std::size_t>(cfg.tiers))
    throw ConfigError("hs_forward: " + std::to_string(params.tiers.size()) + " tier parameter sets for " +
                      std::to_string(cfg.tiers) + " tiers");

  const auto node = static_cast<std::size_t>(cfg.node_size);
  const auto segments = static_cast<std::size_t>(cfg.segments());
  const auto coarse_tiers = static_cast<std::size_t>(cfg.tiers - 1);
  const std::size_t hidden = params.tiers.back().hidden();

  TemporalOutput out;
  // reps[l][i]: representation of segment i at tier l+1.
  std::vector<std::vector<Tensor>> reps(coarse_tiers);
  for (std::size_t l = 0; l < coarse_tiers; ++l) {
    for (std::size_t i = 0; i < segments; ++i) {
      LstmState state = LstmState::zeros(hidden);
      for (std::size_t t = i * node; t < (i + 1) * node; ++t) {
        std::vector<Tensor> parts{mean_pool(blocks[t])};
        for (std::size_t k = 0; k < l; ++k) parts.push_back(reps[k][i]);
        Tensor input = parts.size() == 1 ? parts[0] : concat(parts);
        state = lstm_step(input, state, params.tiers[l]);
      }
      reps[l].push_back(state.h);
      out.segments.push_back({static_cast<int>(l + 1), static_cast<int>(i), state.h});
    }
  }

  const AttentionParams& attn = params.attention;
  LstmState state = LstmState::zeros(hidden);
  for (std::size_t t = 0; t < blocks.size(); ++t) {
    const std::size_t seg = t / node;
    std::optional<Tensor> context;
    for (std::size_t l = 0; l < coarse_tiers; ++l) context = context ? add(*context, reps[l][seg]) : reps[l][seg];
    Tensor m = detail::attend(blocks[t], state.h, attn, context, mode);
    Tensor x = pool(blocks[t], m, attn.w_res);
    Tensor input = x;
    if (coarse_tiers > 0) {
      std::vector<Tensor> parts{x};
      for (std::size_t l = 0; l < coarse_tiers; ++l) parts.push_back(reps[l][seg]);
      input = concat(parts);
    }
    state = lstm_step(input, state, params.tiers.back());
    out.masks.push_back(std::move(m));
  }
  out.gif_repr = state.h;
  return out;
}

// Single attended LSTM layer over all frames.
inline TemporalOutput plain_lstm_forward(std::span<const FeatureBlock> blocks,
                                         std::span<const SupervisionHeatmap> supervision,
                                         const AttentionParams& attention, const LstmParams& lstm,
                                         AttentionMode mode = AttentionMode::keypoint) {
  detail::check_lengths(blocks.size(), supervision.size());
  TemporalOutput out;
  LstmState state = LstmState::zeros(lstm.hidden());
  for (const auto& block : blocks) {
    Tensor m = detail::attend(block, state.h, attention, std::nullopt, mode);
    state = lstm_step(pool(block, m, attention.w_res), state, lstm);
    out.masks.push_back(std::move(m));
  }
  out.gif_repr = state.h;
  return out;
}

}  // namespace kavan
