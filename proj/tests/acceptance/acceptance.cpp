// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).
//
//   acceptance            run all criteria
//   acceptance 3 5        run the listed criteria only

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kavan/kavan.hpp"

using namespace kavan;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

Outcome gradient_integrity() {
  auto r = gradcheck();
  bool ok = r.max_rel_error < 1e-4 && r.seconds < 60.0;
  return {ok, fmt("max rel error %.3g over %zu parameters (worst %s[%zu]), %.1f s", r.max_rel_error, r.checked,
                  r.worst_parameter.c_str(), r.worst_index, r.seconds)};
}

// --- 2 ---------------------------------------------------------------------

std::size_t brute_force_pairs(const std::vector<double>& pred, const std::vector<double>& target) {
  std::size_t n = 0;
  for (std::size_t a = 0; a < pred.size(); ++a)
    for (std::size_t b = 0; b < pred.size(); ++b) {
      bool a_first = target[a] > target[b] || (target[a] == target[b] && a < b);
      if (a_first && pred[a] < pred[b]) ++n;
    }
  return n;
}

std::vector<double> bin_average(const std::vector<double>& g, std::size_t side, std::size_t out) {
  auto bin_of = [&](std::size_t r) {
    std::size_t b = 0;
    while ((b + 1) * side / out <= r) ++b;
    return b;
  };
  std::vector<double> sum(out * out, 0.0), cnt(out * out, 0.0);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      std::size_t k = bin_of(r) * out + bin_of(c);
      sum[k] += g[r * side + c];
      cnt[k] += 1.0;
    }
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= cnt[k];
  return sum;
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto k = static_cast<std::size_t>(rng.uniform_int(2, 9));
    std::vector<double> pred(k), target(k);
    bool coarse = trial % 2 == 0;  // half the draws carry ties
    for (std::size_t i = 0; i < k; ++i) {
      pred[i] = coarse ? static_cast<double>(rng.uniform_int(0, 4)) : rng.uniform(-1, 1);
      target[i] = coarse ? static_cast<double>(rng.uniform_int(0, 4)) : rng.uniform(-1, 1);
    }
    if (rank_violations(pred, target) != brute_force_pairs(pred, target)) ++mismatches;
  }
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(64 * 64);
    for (auto& v : g) v = rng.uniform(-1, 1);
    auto got = downsample(Tensor::matrix(64, 64, g), 7);
    auto want = bin_average(g, 64, 7);
    for (std::size_t i = 0; i < 49; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  bool ok = mismatches == 0 && worst <= 1e-12;
  return {ok, fmt("rank mismatches %zu/1000, downsample max deviation %.3g", mismatches, worst)};
}

// --- 3 ---------------------------------------------------------------------

Outcome normalization() {
  Rng rng(33);
  double worst_heat = 0.0, worst_mask = 0.0;
  std::size_t empty_frames = 0;
  bool empty_exact = true;
  const std::size_t D = 6, d = 5;
  for (int frame = 0; frame < 1000; ++frame) {
    KeypointFrame f;
    auto n = rng.uniform() < 0.1 ? 0 : rng.uniform_int(1, 20);
    for (long i = 0; i < n; ++i)
      f.points.push_back({rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(),
                          rng.uniform() < 0.5 ? KeypointGroup::lips : KeypointGroup::other});
    auto h = supervision_for(f);
    double s = 0.0;
    for (double v : h.cells()) s += v;
    worst_heat = std::max(worst_heat, std::abs(s - 1.0));
    if (f.points.empty()) {
      ++empty_frames;
      for (double v : h.cells()) empty_exact &= v == 1.0 / 49.0;
    }

    auto p = AttentionParams::init(d, D, true, rng);
    p.v = rng.uniform_tensor({1, kAttentionDim}, -5, 5);
    FeatureBlock block{rng.uniform_tensor({kGridCells, D}, -3, 3, false)};
    auto m = mask(score(rng.uniform_tensor({d}, -1, 1, false), block, p, rng.uniform_tensor({d}, -1, 1, false)));
    double ms = 0.0;
    for (double v : m.data()) ms += v;
    worst_mask = std::max(worst_mask, std::abs(ms - 1.0));
  }
  bool ok = worst_heat <= 1e-9 && worst_mask <= 1e-9 && empty_exact && empty_frames > 0;
  return {ok, fmt("1000 frames: heatmap |sum-1| <= %.2g, mask |sum-1| <= %.2g, %zu empty frames %s", worst_heat,
                  worst_mask, empty_frames, empty_exact ? "exactly uniform" : "NOT uniform")};
}

// --- 4 ---------------------------------------------------------------------

Outcome robustness() {
  Rng rng(44);
  bool noop = true;
  bool monotone = true;
  int frames = 0;
  for (int trial = 0; trial < 100; ++trial) {
    KeypointFrame base;
    auto n = rng.uniform_int(0, 10);
    for (long i = 0; i < n; ++i)
      base.points.push_back({rng.uniform(), rng.uniform(), rng.uniform(),
                             rng.uniform() < 0.5 ? KeypointGroup::lips : KeypointGroup::other});
    Keypoint extra{rng.uniform(), rng.uniform(), 0.0, rng.uniform() < 0.5 ? KeypointGroup::lips : KeypointGroup::other};
    auto removed = supervision_for(base);

    KeypointFrame with = base;
    with.points.insert(with.points.begin() + static_cast<long>(rng.uniform_int(0, n + 1)), extra);
    noop &= supervision_for(with).grid.to_vector() == removed.grid.to_vector();
    noop &= render_gaussians(with.points, 5, 64).to_vector() == render_gaussians(base.points, 5, 64).to_vector();

    double prev = INFINITY;
    for (int s = 0; s <= 10; ++s) {
      KeypointFrame f = base;
      Keypoint k = extra;
      k.conf = (10 - s) / 10.0;
      f.points.push_back(k);
      auto h = supervision_for(f);
      double dist = 0.0;
      for (std::size_t i = 0; i < 49; ++i) dist += std::pow(h.cells()[i] - removed.cells()[i], 2);
      dist = std::sqrt(dist);
      if (s < 10 ? !(dist < prev) : dist != 0.0) monotone = false;
      prev = dist;
    }
    ++frames;
  }
  return {noop && monotone, fmt("%d frames: conf=0 no-op %s, annealed distance %s", frames,
                                noop ? "bit-exact" : "VIOLATED", monotone ? "strictly decreasing to 0" : "NOT monotone")};
}

// --- 5 ---------------------------------------------------------------------

Outcome structural_equivalence() {
  Rng rng(55);
  int identical = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto T = static_cast<int>(rng.uniform_int(1, 10));
    const auto D = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto d = static_cast<std::size_t>(rng.uniform_int(1, 8));
    HsLstmConfig cfg{1, T, T};
    auto params = TemporalParams::init(cfg, D, d, rng);
    params.attention.w_res = Tensor::scalar(rng.uniform(-0.1, 0.1), true);
    std::vector<FeatureBlock> blocks;
    for (int t = 0; t < T; ++t) blocks.push_back({rng.uniform_tensor({kGridCells, D}, -2, 2, false), t});
    std::vector<SupervisionHeatmap> heat(static_cast<std::size_t>(T), supervision_for(KeypointFrame{}));
    auto mode = trial % 4 == 3 ? AttentionMode::uniform : AttentionMode::keypoint;
    auto hs = hs_forward(blocks, heat, params, cfg, mode);
    auto plain = plain_lstm_forward(blocks, heat, params.attention, params.tiers[0], mode);
    bool same = hs.gif_repr.to_vector() == plain.gif_repr.to_vector();
    for (std::size_t t = 0; t < blocks.size(); ++t) same &= hs.masks[t].to_vector() == plain.masks[t].to_vector();
    identical += same ? 1 : 0;
  }
  return {identical == 100, fmt("%d/100 random inputs bit-identical", identical)};
}

// --- 6 ---------------------------------------------------------------------

Outcome nmse_calibration() {
  Rng rng(66);
  double worst_mean = 0.0, worst_self = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> t(kEmotionCount);
    for (auto& v : t) v = rng.uniform(-1, 1);
    double m = 0.0;
    for (double v : t) m += v;
    m /= static_cast<double>(t.size());
    worst_mean = std::max(worst_mean, std::abs(nmse(Tensor::full({kEmotionCount}, m), t).item() - 1.0));
    worst_self = std::max(worst_self, std::abs(nmse(Tensor::vector(t), t).item()));
  }
  bool ok = worst_mean <= 1e-12 && worst_self == 0.0;
  return {ok, fmt("mean predictor |nmse-1| <= %.2g, target predictor nmse = %.2g", worst_mean, worst_self)};
}

// --- 7 ---------------------------------------------------------------------

Outcome overfit() {
  auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig syn;
  auto data = generate_synthetic(16, syn);
  RunConfig cfg;  // defaults
  auto tax = default_taxonomy();
  auto r = train(cfg, data, tax);
  auto m = evaluate(r.params, cfg.model, data, tax, cfg.heatmap, cfg.loss);
  double sec = seconds_since(t0);
  bool ok = m.total_loss < 0.05 && m.accuracy == 1.0 && m.mean_rank_violations == 0.0 && sec < 300.0;
  return {ok, fmt("%d steps: train total loss %.4f, accuracy %.3f, rank violations %.3f, %.0f s",
                  cfg.optimizer.steps, m.total_loss, m.accuracy, m.mean_rank_violations, sec)};
}

// --- 8 ---------------------------------------------------------------------

Outcome ablation() {
  auto t0 = std::chrono::steady_clock::now();
  auto tax = default_taxonomy();
  int kp_wins = 0, hs_wins = 0;
  std::ostringstream per_seed;
  for (int seed = 0; seed < 5; ++seed) {
    SyntheticConfig syn;
    syn.seed = 1000 + static_cast<std::uint64_t>(seed);
    auto all = generate_synthetic(250, syn);
    std::vector<GifSample> train_set(all.begin(), all.begin() + 200), test_set(all.begin() + 200, all.end());
    auto run = [&](ModelKind kind, AttentionMode mode, double w_kp) {
      RunConfig cfg;
      cfg.model.kind = kind;
      cfg.model.attention = mode;
      cfg.model.feature_dim = 16;
      cfg.model.hidden_dim = 16;
      cfg.loss.w_kp = w_kp;
      cfg.optimizer.steps = 300;
      cfg.seed = static_cast<std::uint64_t>(seed);
      auto r = train(cfg, train_set, tax);
      return evaluate(r.params, cfg.model, test_set, tax, cfg.heatmap, cfg.loss);
    };
    auto hs_kp = run(ModelKind::hs_lstm, AttentionMode::keypoint, 1.0);
    auto hs_uniform = run(ModelKind::hs_lstm, AttentionMode::uniform, 0.0);
    auto plain_kp = run(ModelKind::plain_lstm, AttentionMode::keypoint, 1.0);
    kp_wins += hs_kp.nmse < hs_uniform.nmse ? 1 : 0;
    hs_wins += hs_kp.accuracy > plain_kp.accuracy ? 1 : 0;
    per_seed << fmt(" [s%d nmse %.3f/%.3f acc %.2f/%.2f]", seed, hs_kp.nmse, hs_uniform.nmse, hs_kp.accuracy,
                    plain_kp.accuracy);
  }
  bool ok = kp_wins >= 4 && hs_wins >= 3;
  return {ok, fmt("keypoint<uniform nmse %d/5 (need 4), hs>plain accuracy %d/5 (need 3), %.0f s;", kp_wins, hs_wins,
                  seconds_since(t0)) +
                  per_seed.str()};
}

// --- 9 ---------------------------------------------------------------------

Outcome determinism() {
  SyntheticConfig syn;
  syn.seed = 99;
  auto data = generate_synthetic(12, syn);
  RunConfig cfg;
  cfg.model.feature_dim = 8;
  cfg.model.hidden_dim = 8;
  cfg.optimizer.steps = 20;
  cfg.optimizer.batch_size = 4;
  cfg.splits = 2;
  cfg.shuffle = true;
  cfg.seed = 5;
  auto tax = default_taxonomy();
  auto a = report_to_json(run_experiment(cfg, data, tax).report).dump(2);
  auto b = report_to_json(run_experiment(cfg, data, tax).report).dump(2);
  return {a == b, fmt("two runs: %zu-byte reports %s", a.size(), a == b ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"oracle equivalence", oracle_equivalence},
      {"normalization invariants", normalization},
      {"robustness invariants", robustness},
      {"structural equivalence", structural_equivalence},
      {"nmse calibration", nmse_calibration},
      {"overfit check", overfit},
      {"ablation direction", ablation},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s  %d %-26s %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
