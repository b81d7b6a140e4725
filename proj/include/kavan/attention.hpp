#pragma once

// Keypoint-attended soft attention over a spatial feature grid.
//
//   score_k = v · tanh(A_h h_prev + A_H ctx + A_c C_k + b)
//   mask    = softmax(score)
//   x       = Σ_k (mask_k + w_res) C_k
//
// The A_H term is present only when the caller supplies a tier context (the
// sum of coarser segment representations in a hierarchical model).

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "kavan/error.hpp"
#include "kavan/random.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

inline constexpr std::size_t kAttentionDim = 32;
inline constexpr std::size_t kGridSide = 7;
inline constexpr std::size_t kGridCells = kGridSide * kGridSide;

// Per-frame visual features, one row per spatial cell: cells is [H*W x D].
struct FeatureBlock {
  Tensor cells;
  int frame_index = 0;
  std::size_t height = kGridSide;
  std::size_t width = kGridSide;

  std::size_t channels() const { return cells.dim(1); }
};

struct AttentionParams {
  Tensor v;        // [1 x 32]
  Tensor A_h;      // [32 x d]
  Tensor A_c;      // [32 x D]
  Tensor A_H;      // [32 x d], undefined unless hierarchical
  Tensor b;        // [32]
  Tensor w_res;    // [1]

  bool has_tier_projection() const { return A_H.defined(); }

  // Uniform in [-0.1, 0.1]; w_res starts at 0.
  static AttentionParams init(std::size_t hidden, std::size_t channels, bool tier_projection, Rng& rng) {
    auto u = [&](std::size_t r, std::size_t c) { return rng.uniform_tensor({r, c}, -0.1, 0.1); };
    AttentionParams p;
    p.v = u(1, kAttentionDim);
    p.A_h = u(kAttentionDim, hidden);
    p.A_c = u(kAttentionDim, channels);
    if (tier_projection) p.A_H = u(kAttentionDim, hidden);
    p.b = rng.uniform_tensor({kAttentionDim}, -0.1, 0.1);
    p.w_res = Tensor::scalar(0.0, true);
    return p;
  }
};

inline void check_block(const FeatureBlock& block) {
  if (block.cells.rank() != 2 || block.cells.dim(0) != block.height * block.width)
    throw DimensionError("feature block must be [H*W x D], got " + shape_str(block.cells.shape()));
}

// Unnormalized attention scores, one per cell.
inline Tensor score(const Tensor& h_prev, const FeatureBlock& block, const AttentionParams& params,
                    const std::optional<Tensor>& tier_context = std::nullopt) {
  check_block(block);
  if (h_prev.numel() != params.A_h.dim(1))
    throw DimensionError("score: hidden state " + shape_str(h_prev.shape()) + " vs A_h " +
                         shape_str(params.A_h.shape()));
  if (block.channels() != params.A_c.dim(1))
    throw DimensionError("score: features " + shape_str(block.cells.shape()) + " vs A_c " +
                         shape_str(params.A_c.shape()));
  Tensor state_term = add(matvec(params.A_h, h_prev), params.b);
  if (tier_context) {
    if (!params.has_tier_projection()) throw ConfigError("score: tier context given but A_H is absent");
    state_term = add(state_term, matvec(params.A_H, *tier_context));
  }
  Tensor cell_term = matmul(block.cells, transpose(params.A_c));  // [cells x 32]
  Tensor hidden = tanh(add_rowwise(cell_term, state_term));
  return reshape(matmul(hidden, transpose(params.v)), {block.cells.dim(0)});
}

inline Tensor mask(const Tensor& scores) { return softmax(scores); }

inline Tensor uniform_mask(std::size_t cells = kGridCells) {
  return Tensor::full({cells}, 1.0 / static_cast<double>(cells));
}

// Residual-weighted pooling of cell features: [D].
inline Tensor pool(const FeatureBlock& block, const Tensor& mask, const Tensor& w_res) {
  check_block(block);
  if (mask.numel() != block.cells.dim(0))
    throw DimensionError("pool: mask " + shape_str(mask.shape()) + " vs block " + shape_str(block.cells.shape()));
  Tensor weights = reshape(add(mask, w_res), {1, mask.numel()});
  return reshape(matmul(weights, block.cells), {block.channels()});
}

// Spatial mean of the cells: the w_res = 0, uniform-mask case of pool.
inline Tensor mean_pool(const FeatureBlock& block) {
  check_block(block);
  return mean(block.cells, 0);
}

}  // namespace kavan
