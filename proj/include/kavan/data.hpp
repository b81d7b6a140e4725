#pragma once

// Samples, emotion taxonomy, segment frame sampling, the patch encoder that
// stands in for a pretrained backbone, and the planted-face synthetic task.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kavan/attention.hpp"
#include "kavan/error.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/losses.hpp"
#include "kavan/random.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

// ---------------------------------------------------------------------------
// Taxonomy

enum class Quadrant : int {
  high_arousal_positive = 0,
  high_arousal_negative = 1,
  low_arousal_positive = 2,
  low_arousal_negative = 3,
};

inline constexpr std::array<std::string_view, 4> kQuadrantNames = {
    "high-arousal-positive", "high-arousal-negative", "low-arousal-positive", "low-arousal-negative"};

inline Quadrant parse_quadrant(std::string_view name) {
  for (std::size_t i = 0; i < kQuadrantNames.size(); ++i)
    if (kQuadrantNames[i] == name) return static_cast<Quadrant>(i);
  throw ConfigError("unknown quadrant '" + std::string(name) + "'");
}

struct EmotionTaxonomy {
  std::vector<std::string> names;
  std::vector<Quadrant> quadrant;  // parallel to names

  std::size_t size() const { return names.size(); }

  void validate() const {
    if (names.size() != kEmotionCount)
      throw ConfigError("taxonomy must list " + std::to_string(kEmotionCount) + " emotions, got " +
                        std::to_string(names.size()));
    if (quadrant.size() != names.size()) throw ConfigError("taxonomy: every emotion needs exactly one quadrant");
    std::array<int, 4> counts{};
    for (auto q : quadrant) ++counts.at(static_cast<std::size_t>(q));
    for (std::size_t q = 0; q < counts.size(); ++q)
      if (counts[q] == 0) throw ConfigError("taxonomy: quadrant " + std::string(kQuadrantNames[q]) + " is empty");
  }

  std::vector<std::size_t> members(Quadrant q) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < quadrant.size(); ++i)
      if (quadrant[i] == q) out.push_back(i);
    return out;
  }
};

// The 17 GIFGIF emotions on the arousal/valence circumplex. The quadrant
// split is a configurable default; see data/taxonomy.json.
inline EmotionTaxonomy default_taxonomy() {
  using Q = Quadrant;
  return {{"amusement", "anger", "contempt", "contentment", "disgust", "embarrassment", "excitement", "fear",
           "guilt", "happiness", "pleasure", "pride", "relief", "sadness", "satisfaction", "shame", "surprise"},
          {Q::high_arousal_positive, Q::high_arousal_negative, Q::low_arousal_negative, Q::low_arousal_positive,
           Q::high_arousal_negative, Q::high_arousal_negative, Q::high_arousal_positive, Q::high_arousal_negative,
           Q::low_arousal_negative, Q::high_arousal_positive, Q::low_arousal_positive, Q::high_arousal_positive,
           Q::low_arousal_positive, Q::low_arousal_negative, Q::low_arousal_positive, Q::low_arousal_negative,
           Q::high_arousal_negative}};
}

// Quadrant of the strongest emotion; ties go to the lowest index.
inline int derive_category(std::span<const double> intensities, const EmotionTaxonomy& taxonomy) {
  if (intensities.size() != taxonomy.size())
    throw DimensionError("derive_category: " + std::to_string(intensities.size()) + " intensities for " +
                         std::to_string(taxonomy.size()) + " emotions");
  return static_cast<int>(taxonomy.quadrant[argmax(intensities)]);
}

// ---------------------------------------------------------------------------
// Samples

struct Image {
  std::size_t side = 64;
  std::vector<double> pixels;  // row-major, values in [0, 1]
};

struct GifSample {
  std::string id;
  std::vector<Image> images;                 // raw frames, or
  std::vector<std::vector<double>> features; // precomputed [49 x feature_dim] blocks
  std::size_t feature_dim = 0;
  std::vector<KeypointFrame> keypoints;      // one per frame
  std::vector<double> intensities;           // 17 values in [-1, 1]

  bool precomputed() const { return !features.empty(); }
  std::size_t frame_count() const { return precomputed() ? features.size() : images.size(); }

  void validate() const {
    if (frame_count() == 0) throw ContractError("sample '" + id + "' has no frames");
    if (!images.empty() && !features.empty()) throw ContractError("sample '" + id + "' mixes images and features");
    if (keypoints.size() != frame_count())
      throw ContractError("sample '" + id + "': " + std::to_string(keypoints.size()) + " keypoint frames for " +
                          std::to_string(frame_count()) + " frames");
    if (intensities.size() != kEmotionCount)
      throw ContractError("sample '" + id + "' must carry " + std::to_string(kEmotionCount) + " intensities");
    for (auto& im : images)
      if (im.pixels.size() != im.side * im.side) throw ContractError("sample '" + id + "': malformed image");
    for (auto& f : features)
      if (feature_dim == 0 || f.size() != kGridCells * feature_dim)
        throw ContractError("sample '" + id + "': malformed feature block");
  }

  EmotionTarget target(const EmotionTaxonomy& taxonomy) const {
    return {intensities, derive_category(intensities, taxonomy)};
  }
};

// ---------------------------------------------------------------------------
// Segment sampling

enum class SamplingMode { random, center };

struct SamplerConfig {
  int T = 8;
  SamplingMode mode = SamplingMode::center;
  std::uint64_t seed = 0;
};

// One frame per segment; segment s covers [floor(s*n/T), floor((s+1)*n/T)).
// With fewer than T frames every frame is used once and the last repeats.
inline std::vector<std::size_t> sample_frames(std::int64_t n_frames, int T, SamplingMode mode, Rng& rng) {
  if (n_frames <= 0) throw ContractError("sample_frames: need at least one frame");
  if (T < 1) throw ContractError("sample_frames: T must be at least 1");
  const auto n = static_cast<std::size_t>(n_frames);
  const auto segs = static_cast<std::size_t>(T);
  std::vector<std::size_t> out(segs);
  if (n < segs) {
    for (std::size_t s = 0; s < segs; ++s) out[s] = std::min(s, n - 1);
    return out;
  }
  for (std::size_t s = 0; s < segs; ++s) {
    std::size_t lo = s * n / segs;
    std::size_t hi = (s + 1) * n / segs;
    if (mode == SamplingMode::center)
      out[s] = (lo + hi - 1) / 2;
    else
      out[s] = lo + static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hi - lo)));
  }
  return out;
}

inline std::vector<std::size_t> sample_frames(std::int64_t n_frames, const SamplerConfig& cfg) {
  Rng rng(cfg.seed);
  return sample_frames(n_frames, cfg.T, cfg.mode, rng);
}

// ---------------------------------------------------------------------------
// Patch encoder

struct EncoderParams {
  Tensor weight;  // [patch_width x D]
  Tensor bias;    // [D]

  static EncoderParams init(std::size_t patch_width, std::size_t channels, Rng& rng) {
    double a = 1.0 / std::sqrt(static_cast<double>(patch_width));
    return {rng.uniform_tensor({patch_width, channels}, -a, a), Tensor::zeros({channels}, true)};
  }
};

// Widest adaptive bin of a side-length image split into kGridSide bins.
inline std::size_t max_bin(std::size_t side) {
  std::size_t m = 0;
  for (auto b : adaptive_bins(side, kGridSide)) m = std::max(m, b.size());
  return m;
}

// [49 x max_bin²]: cell (i, j) holds its bin's pixels row by row, placed in
// the top-left of a max_bin x max_bin frame with zeros elsewhere.
inline Tensor patch_matrix(const Image& image) {
  if (image.pixels.size() != image.side * image.side) throw DimensionError("patch_matrix: malformed image");
  auto bins = adaptive_bins(image.side, kGridSide);
  const std::size_t mb = max_bin(image.side);
  std::vector<double> out(kGridCells * mb * mb, 0.0);
  for (std::size_t i = 0; i < kGridSide; ++i)
    for (std::size_t j = 0; j < kGridSide; ++j) {
      double* cell = out.data() + (i * kGridSide + j) * mb * mb;
      for (std::size_t r = 0; r < bins[i].size(); ++r)
        for (std::size_t c = 0; c < bins[j].size(); ++c)
          cell[r * mb + c] = image.pixels[(bins[i].begin + r) * image.side + bins[j].begin + c];
    }
  return Tensor::matrix(kGridCells, mb * mb, std::move(out));
}

// tanh(patches · W + b) per cell.
inline FeatureBlock encode_patches(const Tensor& patches, const EncoderParams& params, int frame_index = 0) {
  if (patches.dim(1) != params.weight.dim(0))
    throw DimensionError("encode: patches " + shape_str(patches.shape()) + " vs weight " +
                         shape_str(params.weight.shape()));
  return {tanh(add_rowwise(matmul(patches, params.weight), params.bias)), frame_index};
}

inline FeatureBlock encode(const Image& image, const EncoderParams& params, int frame_index = 0) {
  return encode_patches(patch_matrix(image), params, frame_index);
}

// ---------------------------------------------------------------------------
// Synthetic planted-face task
//
// Each GIF has a dominant emotion drawn class-balanced over quadrants. Its
// position on the valence/arousal circle sets all 17 intensities and the
// appearance of a "face" (bright blob, two dark eyes, a mouth bar whose sign
// follows valence, size following arousal). Face-free distractor blobs share
// the blob statistics, so mean pooling mixes face and clutter while attention
// on the face isolates the signal. Keypoints are planted on the face.

struct SyntheticConfig {
  std::uint64_t seed = 0;
  int frames_per_gif = 12;
  std::size_t image_size = 64;
  int distractors = 3;
  double label_noise = 0.01;
  double keypoint_drop = 0.0;      // per keypoint
  double empty_frame_rate = 0.0;   // frames without any keypoints
  double min_conf = 0.8;           // keypoint confidences drawn from [min_conf, 1]
};

// Circumplex angle of each emotion: quadrant members spread evenly over the
// quadrant's 90 degrees (valence = cos, arousal = sin).
inline std::vector<double> emotion_angles(const EmotionTaxonomy& taxonomy) {
  constexpr double quarter = std::numbers::pi / 2;
  const std::array<double, 4> base = {0.0, quarter, 3 * quarter, 2 * quarter};  // indexed by Quadrant
  std::vector<double> angles(taxonomy.size());
  for (int q = 0; q < 4; ++q) {
    auto m = taxonomy.members(static_cast<Quadrant>(q));
    for (std::size_t j = 0; j < m.size(); ++j)
      angles[m[j]] = base[static_cast<std::size_t>(q)] + quarter * (static_cast<double>(j) + 0.5) / static_cast<double>(m.size());
  }
  return angles;
}

struct SyntheticFrameTruth {
  double face_row = 0.0;
  double face_col = 0.0;
  double face_sigma = 0.0;
};

namespace detail {

inline void add_blob(Image& im, double r0, double c0, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t r = 0; r < im.side; ++r)
    for (std::size_t c = 0; c < im.side; ++c) {
      double dr = static_cast<double>(r) - r0, dc = static_cast<double>(c) - c0;
      double d2 = dr * dr + dc * dc;
      if (d2 > 25.0 * sigma * sigma) continue;
      im.pixels[r * im.side + c] += amp * std::exp(-d2 * inv);
    }
}

inline void add_bar(Image& im, double r0, double c0, double half_width, double amp) {
  for (std::size_t r = 0; r < im.side; ++r)
    for (std::size_t c = 0; c < im.side; ++c) {
      double dr = static_cast<double>(r) - r0, dc = static_cast<double>(c) - c0;
      if (std::abs(dc) > half_width + 2.0 || std::abs(dr) > 2.0) continue;
      double wr = std::exp(-dr * dr / 0.8);
      double wc = std::abs(dc) <= half_width ? 1.0 : std::exp(-(std::abs(dc) - half_width) * (std::abs(dc) - half_width));
      im.pixels[r * im.side + c] += amp * wr * wc;
    }
}

inline double bin_center(std::size_t bin, std::size_t side) {
  auto b = adaptive_bins(side, kGridSide)[bin];
  return 0.5 * static_cast<double>(b.begin + b.end - 1);
}

}  // namespace detail

struct SyntheticSample {
  GifSample sample;
  std::vector<SyntheticFrameTruth> truth;
};

inline std::vector<SyntheticSample> generate_synthetic_with_truth(int n, const SyntheticConfig& cfg,
                                                                  const EmotionTaxonomy& taxonomy = default_taxonomy()) {
  if (n < 1) throw ContractError("generate_synthetic: n must be at least 1");
  if (cfg.frames_per_gif < 1) throw ContractError("generate_synthetic: frames_per_gif must be at least 1");
  taxonomy.validate();
  const auto angles = emotion_angles(taxonomy);
  std::size_t widest = 0;
  for (int q = 0; q < 4; ++q) widest = std::max(widest, taxonomy.members(static_cast<Quadrant>(q)).size());
  const double jitter = 0.35 * (std::numbers::pi / 2) / static_cast<double>(widest);
  const std::size_t side = cfg.image_size;
  const double span = static_cast<double>(side - 1);

  // (row, col, group) offsets of the planted keypoints relative to the face centre.
  struct Offset { double dr, dc; KeypointGroup g; };
  const std::array<Offset, 10> layout = {{{-1.5, -2.0, KeypointGroup::other}, {-1.5, 2.0, KeypointGroup::other},
                                          {0.0, 0.0, KeypointGroup::other},   {0.5, -3.0, KeypointGroup::other},
                                          {0.5, 3.0, KeypointGroup::other},   {2.0, -2.0, KeypointGroup::lips},
                                          {2.0, -1.0, KeypointGroup::lips},   {2.0, 0.0, KeypointGroup::lips},
                                          {2.0, 1.0, KeypointGroup::lips},    {2.0, 2.0, KeypointGroup::lips}}};

  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(s)));
    const auto q = static_cast<Quadrant>(rng.uniform_int(0, 4));
    const auto members = taxonomy.members(q);
    const std::size_t dominant = members[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(members.size())))];
    const double phi = angles[dominant] + rng.uniform(-jitter, jitter);
    const double strength = rng.uniform(0.6, 1.0);
    const double valence = std::cos(phi), arousal = std::sin(phi);

    // Intensities mix circumplex affinity with a rank-spaced ladder so that
    // neighbouring ranks stay at least 0.079 apart before noise.
    std::vector<double> affinity(kEmotionCount);
    for (std::size_t k = 0; k < kEmotionCount; ++k) affinity[k] = strength * std::cos(phi - angles[k]);
    auto order = target_order(affinity);
    SyntheticSample ss;
    GifSample& g = ss.sample;
    g.id = "syn-" + std::to_string(cfg.seed) + "-" + std::to_string(s);
    g.intensities.assign(kEmotionCount, 0.0);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      std::size_t k = order[rank];
      double spaced = 0.9 - 1.8 * static_cast<double>(rank) / static_cast<double>(kEmotionCount - 1);
      double v = 0.3 * affinity[k] + 0.7 * spaced + rng.uniform(-cfg.label_noise, cfg.label_noise);
      g.intensities[k] = std::clamp(v, -1.0, 1.0);
    }

    // Face placement: upper rows for positive arousal, lower rows otherwise.
    const std::size_t face_bin_r = static_cast<std::size_t>(arousal > 0 ? rng.uniform_int(1, 4) : rng.uniform_int(3, 6));
    const std::size_t face_bin_c = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const double face_sigma = 2.5 + 0.8 * arousal;
    std::vector<std::pair<std::size_t, std::size_t>> clutter;
    while (clutter.size() < static_cast<std::size_t>(cfg.distractors)) {
      std::size_t r = static_cast<std::size_t>(rng.uniform_int(0, 7)), c = static_cast<std::size_t>(rng.uniform_int(0, 7));
      bool taken = (r == face_bin_r && c == face_bin_c);
      for (auto& p : clutter) taken |= (p.first == r && p.second == c);
      if (!taken) clutter.emplace_back(r, c);
    }
    struct Clutter { double sigma, amp, bar; };
    std::vector<Clutter> clutter_look;
    for (std::size_t i = 0; i < clutter.size(); ++i)
      clutter_look.push_back({rng.uniform(1.7, 3.3), rng.uniform(0.3, 0.8), rng.uniform(-0.3, 0.3)});
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    for (int t = 0; t < cfg.frames_per_gif; ++t) {
      Image im{side, std::vector<double>(side * side)};
      for (auto& p : im.pixels) p = rng.uniform(0.0, 0.1);
      const double expr = 0.7 + 0.3 * std::sin(2.0 * std::numbers::pi * t / cfg.frames_per_gif + phase);
      const double fr = detail::bin_center(face_bin_r, side) + static_cast<double>(rng.uniform_int(-1, 2));
      const double fc = detail::bin_center(face_bin_c, side) + static_cast<double>(rng.uniform_int(-1, 2));
      detail::add_blob(im, fr, fc, face_sigma, 0.55 + 0.15 * expr * strength);
      detail::add_blob(im, fr - 1.5, fc - 2.0, 0.8, -0.35);
      detail::add_blob(im, fr - 1.5, fc + 2.0, 0.8, -0.35);
      detail::add_bar(im, fr + 2.0, fc, 2.0, 0.3 * valence * expr * strength);
      for (std::size_t i = 0; i < clutter.size(); ++i) {
        double cr = detail::bin_center(clutter[i].first, side) + static_cast<double>(rng.uniform_int(-1, 2));
        double cc = detail::bin_center(clutter[i].second, side) + static_cast<double>(rng.uniform_int(-1, 2));
        detail::add_blob(im, cr, cc, clutter_look[i].sigma, clutter_look[i].amp);
        detail::add_bar(im, cr + 2.0, cc, 2.0, clutter_look[i].bar * expr);
      }
      for (auto& p : im.pixels) p = std::clamp(p, 0.0, 1.0);
      g.images.push_back(std::move(im));

      KeypointFrame kf;
      if (rng.uniform() >= cfg.empty_frame_rate) {
        for (const auto& o : layout) {
          double r = fr + o.dr + rng.normal(0.0, 0.7);
          double c = fc + o.dc + rng.normal(0.0, 0.7);
          double conf = rng.uniform(cfg.min_conf, 1.0);
          if (rng.uniform() < cfg.keypoint_drop) continue;
          kf.points.push_back({c / span, r / span, conf, o.g});
        }
      }
      g.keypoints.push_back(std::move(kf));
      ss.truth.push_back({fr, fc, face_sigma});
    }
    out.push_back(std::move(ss));
  }
  return out;
}

inline std::vector<GifSample> generate_synthetic(int n, const SyntheticConfig& cfg,
                                                 const EmotionTaxonomy& taxonomy = default_taxonomy()) {
  auto full = generate_synthetic_with_truth(n, cfg, taxonomy);
  std::vector<GifSample> out;
  out.reserve(full.size());
  for (auto& s : full) out.push_back(std::move(s.sample));
  return out;
}

}  // namespace kavan
