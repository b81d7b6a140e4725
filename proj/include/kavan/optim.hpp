#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kavan/error.hpp"
#include "kavan/model.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-2;
  int steps = 500;
  int batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  }
};

// First-order update over the tensors listed by KavanParams::named().
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(KavanParams& params) {
    std::vector<Tensor> tensors;
    for (auto& [name, t] : params.named()) tensors.push_back(t);
    step(tensors);
  }

  // Tensors must be passed in the same order on every call.
  void step(std::span<Tensor> tensors) {
    if (cfg_.kind == OptimizerKind::adam && m_.empty()) {
      for (auto& t : tensors) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < tensors.size(); ++p) {
      Tensor& t = tensors[p];
      auto g = t.grad();
      auto x = t.mutable_data();
      if (cfg_.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg_.lr * g[i];
        continue;
      }
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        x[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace kavan
