#pragma once

// Central-difference oracle. Uses only forward values of the loss builder, so
// it stays independent of every adjoint rule it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "kavan/random.hpp"
#include "kavan/tensor.hpp"

namespace kavan::test {

struct FdResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// loss(): rebuilds the graph from the current leaf values and returns a scalar.
inline FdResult check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5,
                                double floor = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss());
  FdResult r;
  for (auto& l : leaves) {
    std::vector<double> analytic(l.grad().begin(), l.grad().end());
    auto x = l.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double orig = x[i];
      x[i] = orig + h;
      double up = loss().item();
      x[i] = orig - h;
      double down = loss().item();
      x[i] = orig;
      double numeric = (up - down) / (2 * h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], numeric, floor));
      ++r.checked;
    }
  }
  return r;
}

inline Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor(std::move(shape), lo, hi, true);
}

}  // namespace kavan::test
