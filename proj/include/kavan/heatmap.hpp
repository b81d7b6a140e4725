#pragma once

// Keypoint supervision targets: confidence-weighted Gaussian overlay on a
// square source grid, adaptive-bin downsampling to the 7x7 attention grid,
// then a spatial softmax.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kavan/error.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

enum class KeypointGroup { lips, other };

struct Keypoint {
  double x = 0.0;  // normalized column
  double y = 0.0;  // normalized row
  double conf = 0.0;
  KeypointGroup group = KeypointGroup::other;

  bool off_frame() const { return x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0; }
};

// Keypoints estimated on one frame; may be empty.
struct KeypointFrame {
  std::vector<Keypoint> points;
};

struct HeatmapConfig {
  double sigma = 5.0;        // in source-grid pixels
  std::size_t resolution = 64;
  std::size_t grid = 7;
  double lip_weight = 0.5;   // multiplies lip-group confidences
  double scale = 1.0;        // applied to the downsampled overlay before softmax
};

// grid: [7x7], positive, sums to 1.
struct SupervisionHeatmap {
  Tensor grid;
  std::size_t source_resolution = 64;

  std::span<const double> cells() const { return grid.data(); }
};

// Half-open source range covered by one output bin.
struct BinRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

// Bin i covers [floor(i*source/out), floor((i+1)*source/out)). For 64 -> 7
// the bins hold 9 or 10 cells.
inline std::vector<BinRange> adaptive_bins(std::size_t source, std::size_t out) {
  if (out == 0 || source < out)
    throw DimensionError("adaptive_bins: cannot split " + std::to_string(source) + " cells into " +
                         std::to_string(out) + " bins");
  std::vector<BinRange> bins(out);
  for (std::size_t i = 0; i < out; ++i) bins[i] = {i * source / out, (i + 1) * source / out};
  return bins;
}

inline double keypoint_weight(const Keypoint& kp, double lip_weight) {
  if (kp.conf < 0.0 || kp.conf > 1.0)
    throw ContractError("keypoint confidence " + std::to_string(kp.conf) + " outside [0,1]");
  return kp.group == KeypointGroup::lips ? kp.conf * lip_weight : kp.conf;
}

// Dense (untruncated) overlay of weighted Gaussians on a resolution x resolution grid.
inline Tensor render_gaussians(std::span<const Keypoint> keypoints, double sigma, std::size_t resolution,
                               double lip_weight = 0.5) {
  if (!(sigma > 0.0)) throw ContractError("render_gaussians: sigma must be positive");
  if (resolution < 2) throw DimensionError("render_gaussians: resolution must be at least 2");
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double span = static_cast<double>(resolution - 1);
  std::vector<double> out(resolution * resolution, 0.0);
  for (const auto& kp : keypoints) {
    double w = keypoint_weight(kp, lip_weight);
    if (w == 0.0) continue;
    double rc = kp.y * span;
    double cc = kp.x * span;
    for (std::size_t r = 0; r < resolution; ++r) {
      double dr = static_cast<double>(r) - rc;
      for (std::size_t c = 0; c < resolution; ++c) {
        double dc = static_cast<double>(c) - cc;
        out[r * resolution + c] += w * std::exp(-(dr * dr + dc * dc) * inv2s2);
      }
    }
  }
  return Tensor::matrix(resolution, resolution, std::move(out));
}

// Adaptive bin averaging of a square grid to out x out.
inline Tensor downsample(const Tensor& grid, std::size_t out = 7) {
  if (grid.rank() != 2 || grid.dim(0) != grid.dim(1))
    throw DimensionError("downsample: expected a square grid, got " + shape_str(grid.shape()));
  std::size_t side = grid.dim(0);
  if (side < out) throw DimensionError("downsample: side " + std::to_string(side) + " smaller than " + std::to_string(out));
  auto bins = adaptive_bins(side, out);
  auto g = grid.data();
  std::vector<double> res(out * out, 0.0);
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t j = 0; j < out; ++j) {
      double acc = 0.0;
      for (std::size_t r = bins[i].begin; r < bins[i].end; ++r)
        for (std::size_t c = bins[j].begin; c < bins[j].end; ++c) acc += g[r * side + c];
      res[i * out + j] = acc / static_cast<double>(bins[i].size() * bins[j].size());
    }
  return Tensor::matrix(out, out, std::move(res));
}

inline SupervisionHeatmap normalize(const Tensor& grid, std::size_t source_resolution = 64) {
  auto values = softmax_values(grid.data());  // throws NumericInputError on NaN/Inf
  return {Tensor::from(grid.shape(), std::move(values)), source_resolution};
}

inline SupervisionHeatmap supervision_for(const KeypointFrame& frame, const HeatmapConfig& cfg = {}) {
  Tensor overlay = render_gaussians(frame.points, cfg.sigma, cfg.resolution, cfg.lip_weight);
  Tensor small = downsample(overlay, cfg.grid);
  if (cfg.scale != 1.0) small = scale(small, cfg.scale);
  return normalize(small, cfg.resolution);
}

// Overlay, then downsample, then softmax, per frame.
inline std::vector<SupervisionHeatmap> build_supervision(std::span<const KeypointFrame> frames,
                                                         const HeatmapConfig& cfg = {}) {
  std::vector<SupervisionHeatmap> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(supervision_for(f, cfg));
  return out;
}

}  // namespace kavan
