#pragma once

// Training and evaluation loops, seeded split experiments, gradient checking
// and attention-mask dumps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "kavan/data.hpp"
#include "kavan/error.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/io.hpp"
#include "kavan/losses.hpp"
#include "kavan/model.hpp"
#include "kavan/optim.hpp"
#include "kavan/random.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

struct RunConfig {
  ModelConfig model{};
  LossWeights loss{};
  OptimizerConfig optimizer{};
  HeatmapConfig heatmap{};
  std::uint64_t seed = 0;
  int splits = 0;        // 0: train and report on the whole dataset
  double test_fraction = 0.2;
  bool shuffle = false;  // seeded per-epoch shuffle; off = fixed order
  std::string taxonomy_path;

  void validate() const {
    model.validate();
    loss.validate();
    optimizer.validate();
    if (splits < 0) throw ConfigError("splits must be non-negative");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
    if (!taxonomy_path.empty() && !std::filesystem::exists(taxonomy_path))
      throw ConfigError("taxonomy file " + taxonomy_path + " does not exist");
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) {
      const json& m = j["model"];
      if (m.contains("kind")) {
        auto k = m["kind"].get<std::string>();
        if (k == "plain_lstm") c.model.kind = ModelKind::plain_lstm;
        else if (k == "hs_lstm") c.model.kind = ModelKind::hs_lstm;
        else throw ConfigError("unknown model kind '" + k + "'");
      }
      if (m.contains("attention")) {
        auto a = m["attention"].get<std::string>();
        if (a == "keypoint") c.model.attention = AttentionMode::keypoint;
        else if (a == "uniform") c.model.attention = AttentionMode::uniform;
        else throw ConfigError("unknown attention mode '" + a + "'");
      }
      detail::read_opt(m, "tiers", c.model.hs.tiers);
      detail::read_opt(m, "node_size", c.model.hs.node_size);
      detail::read_opt(m, "frames", c.model.hs.frames);
      detail::read_opt(m, "feature_dim", c.model.feature_dim);
      detail::read_opt(m, "hidden_dim", c.model.hidden_dim);
      detail::read_opt(m, "image_side", c.model.image_side);
    }
    if (j.contains("loss")) {
      const json& l = j["loss"];
      detail::read_opt(l, "w_kp", c.loss.w_kp);
      detail::read_opt(l, "w_c", c.loss.w_C);
      detail::read_opt(l, "w_rank", c.loss.w_RANK);
      detail::read_opt(l, "rank_margin", c.loss.rank_margin);
    }
    if (j.contains("optimizer")) {
      const json& o = j["optimizer"];
      if (o.contains("kind")) {
        auto k = o["kind"].get<std::string>();
        if (k == "adam") c.optimizer.kind = OptimizerKind::adam;
        else if (k == "sgd") c.optimizer.kind = OptimizerKind::sgd;
        else throw ConfigError("unknown optimizer '" + k + "'");
      }
      detail::read_opt(o, "lr", c.optimizer.lr);
      detail::read_opt(o, "steps", c.optimizer.steps);
      detail::read_opt(o, "batch_size", c.optimizer.batch_size);
    }
    if (j.contains("heatmap")) {
      const json& h = j["heatmap"];
      detail::read_opt(h, "sigma", c.heatmap.sigma);
      detail::read_opt(h, "lip_weight", c.heatmap.lip_weight);
      detail::read_opt(h, "scale", c.heatmap.scale);
    }
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "splits", c.splits);
    detail::read_opt(j, "test_fraction", c.test_fraction);
    detail::read_opt(j, "shuffle", c.shuffle);
    detail::read_opt(j, "taxonomy", c.taxonomy_path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  return {{"model",
           {{"kind", c.model.kind == ModelKind::plain_lstm ? "plain_lstm" : "hs_lstm"},
            {"attention", c.model.attention == AttentionMode::keypoint ? "keypoint" : "uniform"},
            {"tiers", c.model.hs.tiers},
            {"node_size", c.model.hs.node_size},
            {"frames", c.model.hs.frames},
            {"feature_dim", c.model.feature_dim},
            {"hidden_dim", c.model.hidden_dim},
            {"image_side", c.model.image_side}}},
          {"loss", {{"w_kp", c.loss.w_kp}, {"w_c", c.loss.w_C}, {"w_rank", c.loss.w_RANK}, {"rank_margin", c.loss.rank_margin}}},
          {"optimizer",
           {{"kind", c.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
            {"lr", c.optimizer.lr},
            {"steps", c.optimizer.steps},
            {"batch_size", c.optimizer.batch_size}}},
          {"heatmap", {{"sigma", c.heatmap.sigma}, {"lip_weight", c.heatmap.lip_weight}, {"scale", c.heatmap.scale}}},
          {"seed", c.seed},
          {"splits", c.splits},
          {"test_fraction", c.test_fraction},
          {"shuffle", c.shuffle},
          {"taxonomy", c.taxonomy_path}};
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double nmse = 0.0;
  double mean_rank_violations = 0.0;
  double kp_loss = 0.0;
  double total_loss = 0.0;  // mean per-sample training objective
};

inline json metrics_to_json(const EvalMetrics& m) {
  return {{"count", m.count},
          {"accuracy", m.accuracy},
          {"nmse", m.nmse},
          {"mean_rank_violations", m.mean_rank_violations},
          {"kp_loss", m.kp_loss},
          {"total_loss", m.total_loss}};
}

struct SplitResult {
  int split = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  EvalMetrics train;
  EvalMetrics test;
  double final_train_loss = 0.0;
};

struct MetricsReport {
  std::vector<SplitResult> splits;
  // Means over splits of the evaluated set (test set when splits > 0).
  double accuracy = 0.0;
  double nmse_mean = 0.0;
  double nmse_std = 0.0;
  double mean_rank_violations = 0.0;
  double kp_loss = 0.0;
  double runtime_seconds = 0.0;  // not serialized: reports stay byte-comparable

  void finalize(bool use_test) {
    const double n = static_cast<double>(splits.size());
    accuracy = nmse_mean = nmse_std = mean_rank_violations = kp_loss = 0.0;
    for (auto& s : splits) {
      const EvalMetrics& m = use_test ? s.test : s.train;
      accuracy += m.accuracy / n;
      nmse_mean += m.nmse / n;
      mean_rank_violations += m.mean_rank_violations / n;
      kp_loss += m.kp_loss / n;
    }
    for (auto& s : splits) {
      double d = (use_test ? s.test : s.train).nmse - nmse_mean;
      nmse_std += d * d / n;
    }
    nmse_std = std::sqrt(nmse_std);
  }
};

inline json report_to_json(const MetricsReport& r) {
  json splits = json::array();
  for (auto& s : r.splits) {
    json j = {{"split", s.split}, {"train_size", s.train_size}, {"final_train_loss", s.final_train_loss},
              {"train", metrics_to_json(s.train)}};
    if (s.test_size > 0) j["test"] = metrics_to_json(s.test), j["test_size"] = s.test_size;
    splits.push_back(j);
  }
  return {{"splits", splits},
          {"average",
           {{"accuracy", r.accuracy},
            {"nmse", r.nmse_mean},
            {"nmse_std", r.nmse_std},
            {"mean_rank_violations", r.mean_rank_violations},
            {"kp_loss", r.kp_loss}}}};
}

// ---------------------------------------------------------------------------
// Training

struct StepLog {
  int step = 0;
  double total = 0.0;
  double regression = 0.0;
  double classification = 0.0;
  double ranking = 0.0;
  double keypoint = 0.0;
};

struct TrainResult {
  KavanParams params;
  std::vector<StepLog> history;
};

using StepCallback = std::function<void(const StepLog&)>;

inline std::vector<PreparedSample> prepare_all(std::span<const GifSample> samples, const EmotionTaxonomy& taxonomy,
                                               const HeatmapConfig& heatmap) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (auto& s : samples) out.push_back(prepare(s, taxonomy, heatmap));
  return out;
}

inline void check_model_matches_data(const ModelConfig& model, std::span<const GifSample> samples) {
  for (auto& s : samples) {
    if (s.precomputed() != (model.image_side == 0))
      throw ConfigError(model.image_side == 0 ? "model expects precomputed features but sample '" + s.id + "' has images"
                                              : "model expects raw frames but sample '" + s.id + "' has features");
    if (!s.precomputed() && s.images.front().side != model.image_side)
      throw ConfigError("sample '" + s.id + "' frame side differs from model image_side");
  }
}

namespace detail {

inline void guard_finite(int step, const LossTerms& t) {
  const std::pair<const char*, const Tensor*> parts[] = {{"regression", &t.regression},
                                                         {"classification", &t.classification},
                                                         {"ranking", &t.ranking},
                                                         {"keypoint", &t.keypoint},
                                                         {"total", &t.total}};
  bool bad = false;
  for (auto& [name, v] : parts) bad |= !std::isfinite(v->item());
  if (!bad) return;
  std::ostringstream os;
  os << "non-finite loss at step " << step << ":";
  for (auto& [name, v] : parts) os << ' ' << name << '=' << v->item();
  throw NumericAbort(os.str());
}

}  // namespace detail

inline TrainResult train(const RunConfig& cfg, std::span<const GifSample> samples, const EmotionTaxonomy& taxonomy,
                         const StepCallback& on_step = {}) {
  cfg.validate();
  if (samples.empty()) throw ContractError("train: empty dataset");
  check_model_matches_data(cfg.model, samples);
  auto prepared = prepare_all(samples, taxonomy, cfg.heatmap);
  for (auto& p : prepared)
    if (!(population_variance(p.target.intensities) > 1e-12))
      throw ContractError("train: sample '" + p.source->id + "' has constant labels");

  TrainResult result{KavanParams::init(cfg.model, mix_seed(cfg.seed, 1)), {}};
  Optimizer opt(cfg.optimizer);
  const std::size_t n = prepared.size();
  const auto batch = static_cast<std::size_t>(cfg.optimizer.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(mix_seed(cfg.seed, 2));
  std::size_t cursor = 0;

  for (int step = 0; step < cfg.optimizer.steps; ++step) {
    result.params.zero_grad();
    StepLog log{step};
    const std::size_t take = std::min(batch, n);
    for (std::size_t b = 0; b < take; ++b) {
      if (cursor == n) {
        cursor = 0;
        if (cfg.shuffle)
          for (std::size_t i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i + 1)))]);
      }
      const std::size_t idx = order[cursor++];
      const PreparedSample& s = prepared[idx];
      Rng frame_rng(mix_seed(cfg.seed, 1000003ULL * static_cast<std::uint64_t>(step) + idx));
      auto frames = sample_frames(static_cast<std::int64_t>(s.inputs.size()), cfg.model.frames(), SamplingMode::random, frame_rng);
      LossTerms terms;
      try {
        terms = compute_losses(forward(result.params, cfg.model, s, frames), s.target, cfg.loss);
      } catch (const NumericInputError& e) {
        throw NumericAbort("non-finite values at step " + std::to_string(step) + " (sample '" + s.source->id +
                           "'): " + e.what());
      }
      detail::guard_finite(step, terms);
      backward(scale(terms.total, 1.0 / static_cast<double>(take)));
      const double w = 1.0 / static_cast<double>(take);
      log.total += w * terms.total.item();
      log.regression += w * terms.regression.item();
      log.classification += w * terms.classification.item();
      log.ranking += w * terms.ranking.item();
      log.keypoint += w * terms.keypoint.item();
    }
    opt.step(result.params);
    result.history.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

inline EvalMetrics evaluate(const KavanParams& params, const ModelConfig& model, std::span<const GifSample> samples,
                            const EmotionTaxonomy& taxonomy, const HeatmapConfig& heatmap = {},
                            const LossWeights& weights = {}) {
  if (samples.empty()) throw ContractError("evaluate: empty dataset");
  check_model_matches_data(model, samples);
  EvalMetrics m;
  for (auto& s : samples) {
    PreparedSample p = prepare(s, taxonomy, heatmap);
    Rng unused;
    auto frames = sample_frames(static_cast<std::int64_t>(p.inputs.size()), model.frames(), SamplingMode::center, unused);
    ModelOutput out = forward(params, model, p, frames);
    LossTerms terms = compute_losses(out, p.target, weights);
    m.accuracy += static_cast<int>(argmax(out.logits.data())) == p.target.category ? 1.0 : 0.0;
    m.nmse += terms.regression.item();
    m.mean_rank_violations += static_cast<double>(rank_violations(out.intensities.data(), p.target.intensities));
    m.kp_loss += terms.keypoint.item();
    m.total_loss += terms.total.item();
    ++m.count;
  }
  const double n = static_cast<double>(m.count);
  m.accuracy /= n, m.nmse /= n, m.mean_rank_violations /= n, m.kp_loss /= n, m.total_loss /= n;
  return m;
}

// Metrics of a predictor that outputs each sample's own target: intensities
// equal to the labels and logits one-hot on the derived category. Masks are
// the supervision heatmaps themselves.
inline EvalMetrics evaluate_oracle(std::span<const GifSample> samples, const EmotionTaxonomy& taxonomy) {
  EvalMetrics m;
  for (auto& s : samples) {
    auto target = s.target(taxonomy);
    Tensor pred = Tensor::vector(target.intensities);
    std::vector<double> logits(kCategoryCount, 0.0);
    logits[static_cast<std::size_t>(target.category)] = 1.0;
    m.accuracy += static_cast<int>(argmax(logits)) == target.category ? 1.0 : 0.0;
    m.nmse += nmse(pred, target.intensities).item();
    m.mean_rank_violations += static_cast<double>(rank_violations(pred.data(), target.intensities));
    ++m.count;
  }
  const double n = static_cast<double>(m.count);
  m.accuracy /= n, m.nmse /= n, m.mean_rank_violations /= n;
  return m;
}

// Seeded 80/20 split: a permutation of indices, test = first share.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double test_fraction,
                                                                                    std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i + 1)))]);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> tr(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(test.begin(), test.end());
  std::sort(tr.begin(), tr.end());
  return {tr, test};
}

inline std::vector<GifSample> select(std::span<const GifSample> all, const std::vector<std::size_t>& idx) {
  std::vector<GifSample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

struct ExperimentResult {
  MetricsReport report;
  KavanParams params;  // of the last split (or the full-data run)
};

// splits == 0: one run on everything, metrics on the training data.
// splits == k: k seeded train/test splits, averaged test metrics.
inline ExperimentResult run_experiment(const RunConfig& cfg, std::span<const GifSample> samples,
                                       const EmotionTaxonomy& taxonomy, const StepCallback& on_step = {}) {
  auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  ExperimentResult res;
  if (cfg.splits == 0) {
    auto tr = train(cfg, samples, taxonomy, on_step);
    SplitResult s;
    s.train_size = samples.size();
    s.train = evaluate(tr.params, cfg.model, samples, taxonomy, cfg.heatmap, cfg.loss);
    s.final_train_loss = tr.history.empty() ? 0.0 : tr.history.back().total;
    res.report.splits.push_back(s);
    res.report.finalize(false);
    res.params = std::move(tr.params);
  } else {
    if (samples.size() < 2) throw ContractError("split experiments need at least two samples");
    for (int k = 0; k < cfg.splits; ++k) {
      auto [tr_idx, te_idx] = split_indices(samples.size(), cfg.test_fraction, mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(k)));
      auto train_set = select(samples, tr_idx);
      auto test_set = select(samples, te_idx);
      RunConfig split_cfg = cfg;
      split_cfg.seed = mix_seed(cfg.seed, 200 + static_cast<std::uint64_t>(k));
      auto tr = train(split_cfg, train_set, taxonomy, on_step);
      SplitResult s;
      s.split = k;
      s.train_size = train_set.size();
      s.test_size = test_set.size();
      s.train = evaluate(tr.params, cfg.model, train_set, taxonomy, cfg.heatmap, cfg.loss);
      s.test = evaluate(tr.params, cfg.model, test_set, taxonomy, cfg.heatmap, cfg.loss);
      s.final_train_loss = tr.history.empty() ? 0.0 : tr.history.back().total;
      res.report.splits.push_back(s);
      res.params = std::move(tr.params);
    }
    res.report.finalize(true);
  }
  res.report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckConfig {
  std::uint64_t seed = 7;
  double step = 1e-5;
  double tolerance = 1e-4;
  double denominator_floor = 1e-6;  // relative error uses max(|analytic|, |numeric|, floor)
  ModelConfig model{ModelKind::hs_lstm, HsLstmConfig{2, 1, 2}, 4, 4, AttentionMode::keypoint, 64};
  LossWeights loss{};
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

inline json gradcheck_to_json(const GradcheckReport& r) {
  return {{"checked", r.checked},       {"max_rel_error", r.max_rel_error}, {"worst_parameter", r.worst_parameter},
          {"worst_index", r.worst_index}, {"worst_analytic", r.worst_analytic}, {"worst_numeric", r.worst_numeric},
          {"passed", r.passed},         {"seconds", r.seconds}};
}

// Central differences on the total loss for every scalar parameter of a tiny
// end-to-end model (encoder, attention, every tier, both heads).
inline GradcheckReport gradcheck(const GradcheckConfig& cfg = {}) {
  auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig syn;
  syn.seed = cfg.seed;
  syn.frames_per_gif = cfg.model.frames();
  syn.empty_frame_rate = 0.0;
  auto samples = generate_synthetic(1, syn);
  const auto taxonomy = default_taxonomy();
  PreparedSample prepared = prepare(samples[0], taxonomy);
  std::vector<std::size_t> frames(static_cast<std::size_t>(cfg.model.frames()));
  std::iota(frames.begin(), frames.end(), std::size_t{0});

  KavanParams params = KavanParams::init(cfg.model, mix_seed(cfg.seed, 1));
  auto loss_value = [&] {
    return compute_losses(forward(params, cfg.model, prepared, frames), prepared.target, cfg.loss).total;
  };
  params.zero_grad();
  backward(loss_value());

  GradcheckReport report;
  for (auto& [name, t] : params.named()) {
    Tensor leaf = t;
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto x = leaf.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + cfg.step;
      double up = loss_value().item();
      x[i] = orig - cfg.step;
      double down = loss_value().item();
      x[i] = orig;
      double numeric = (up - down) / (2.0 * cfg.step);
      double denom = std::max({std::abs(analytic[i]), std::abs(numeric), cfg.denominator_floor});
      double rel = std::abs(analytic[i] - numeric) / denom;
      if (report.checked++ == 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < cfg.tolerance;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// Mask dumps

// Per sampled frame: frame_<t>.json with the supervision heatmap and the
// predicted mask, and frame_<t>.pgm with both grids side by side.
inline std::vector<std::filesystem::path> dump_masks(const KavanParams& params, const ModelConfig& model,
                                                     const GifSample& sample, const EmotionTaxonomy& taxonomy,
                                                     const std::filesystem::path& out_dir,
                                                     const HeatmapConfig& heatmap = {}) {
  check_model_matches_data(model, std::span<const GifSample>(&sample, 1));
  PreparedSample p = prepare(sample, taxonomy, heatmap);
  Rng unused;
  auto frames = sample_frames(static_cast<std::int64_t>(p.inputs.size()), model.frames(), SamplingMode::center, unused);
  ModelOutput out = forward(params, model, p, frames);
  std::vector<std::filesystem::path> written;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto hm = out.heatmaps[t].cells();
    auto mk = out.temporal.masks[t].data();
    json j = {{"sample", sample.id},
              {"step", t},
              {"frame", frames[t]},
              {"heatmap", std::vector<double>(hm.begin(), hm.end())},
              {"mask", std::vector<double>(mk.begin(), mk.end())},
              {"side", kGridSide}};
    auto base = out_dir / ("frame_" + std::to_string(t));
    write_json(base.string() + ".json", j);
    write_binary(base.string() + ".pgm", grids_to_pgm({hm, mk}, kGridSide));
    written.push_back(base.string() + ".json");
    written.push_back(base.string() + ".pgm");
  }
  return written;
}

}  // namespace kavan
