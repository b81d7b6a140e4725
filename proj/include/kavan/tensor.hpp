#pragma once

// Dense 64-bit tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to an immutable node. Operations on tensors
// that require gradients record their parents and an adjoint rule; backward()
// collects every node reachable from a scalar loss, orders them by creation
// sequence and replays the adjoint rules in reverse. Only leaves (parameters)
// may be mutated in place, and only between passes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kavan/error.hpp"

namespace kavan {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace testing {

// Mutation hook for gradient-check meta tests: scales one adjoint rule so
// that a correct checker must report a failure. Never set outside tests.
enum class AdjointFault { none, tanh, sigmoid, matmul };
inline std::atomic<AdjointFault> adjoint_fault{AdjointFault::none};

}  // namespace testing

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> adjoint;

  bool is_leaf() const { return !adjoint; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    if (shape_numel(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->seq = detail::next_seq();
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
  static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    Shape s{v.size()};
    return from(std::move(s), std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v, bool requires_grad = false) {
    return from({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t numel() const { return node().value.size(); }
  std::span<const double> data() const { return node().value; }
  double operator[](std::size_t i) const { return node().value[i]; }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node().value[0];
  }
  std::vector<double> to_vector() const { return node().value; }

  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf(); }

  // Gradient of the last backward pass; zeros when nothing flowed in.
  std::span<const double> grad() const {
    auto& n = const_cast<detail::Node&>(node());
    n.ensure_grad();
    return n.grad;
  }
  void zero_grad() {
    auto& g = node_->grad;
    std::fill(g.begin(), g.end(), 0.0);
  }

  // In-place access for optimizers and finite-difference probes. Leaves only.
  std::span<double> mutable_data() {
    if (!is_leaf()) throw ContractError("only leaf tensors may be modified in place");
    return node_->value;
  }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  // Same values, not on the tape.
  Tensor detach() const { return from(shape(), node().value, false); }
  // Independent leaf copy that keeps requires_grad.
  Tensor clone() const { return from(shape(), node().value, requires_grad()); }

  const std::shared_ptr<detail::Node>& handle() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  const detail::Node& node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
  }
  std::shared_ptr<detail::Node> node_;
};

// Builds an op result. The adjoint is recorded only when some parent requires
// gradients; otherwise the result is a constant and stays off the tape.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> adjoint) {
  Tensor out = Tensor::from(std::move(shape), std::move(value), false);
  bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (any) {
    auto& n = const_cast<detail::Node&>(*out.handle());
    n.requires_grad = true;
    n.adjoint = std::move(adjoint);
    n.parents.reserve(parents.size());
    for (auto& p : parents) n.parents.push_back(p.handle());
  }
  return out;
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_finite(std::span<const double> v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericInputError(std::string(op) + ": non-finite input");
}

inline std::vector<double>* grad_of(Node& parent) {
  if (!parent.requires_grad) return nullptr;
  parent.ensure_grad();
  return &parent.grad;
}

inline double fault_scale(testing::AdjointFault which) {
  return testing::adjoint_fault.load(std::memory_order_relaxed) == which ? 1.05 : 1.0;
}

enum class Binary { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, Binary op, const char* name) {
  // Equal shapes, or one side a single value broadcast as a scalar.
  bool a_scalar = a.numel() == 1 && b.numel() != 1;
  bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.numel() != 1) require_same_shape(a, b, name);
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  std::size_t n = shape_numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = av[a_scalar ? 0 : i];
    double y = bv[b_scalar ? 0 : i];
    out[i] = op == Binary::add ? x + y : op == Binary::sub ? x - y : x * y;
  }
  return make_op(out_shape, std::move(out), {a, b}, [a_scalar, b_scalar, op, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    auto* ga = grad_of(pa);
    auto* gb = grad_of(pb);
    for (std::size_t i = 0; i < n; ++i) {
      double g = self.grad[i];
      std::size_t ia = a_scalar ? 0 : i;
      std::size_t ib = b_scalar ? 0 : i;
      switch (op) {
        case Binary::add:
          if (ga) (*ga)[ia] += g;
          if (gb) (*gb)[ib] += g;
          break;
        case Binary::sub:
          if (ga) (*ga)[ia] += g;
          if (gb) (*gb)[ib] -= g;
          break;
        case Binary::mul:
          if (ga) (*ga)[ia] += g * pb.value[ib];
          if (gb) (*gb)[ib] += g * pa.value[ia];
          break;
      }
    }
  });
}

// Elementwise unary op whose derivative is a function of input and output.
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto* g = grad_of(p);
    if (!g) return;
    for (std::size_t i = 0; i < self.value.size(); ++i) (*g)[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::Binary::mul, "mul"); }

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}
inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}
inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor tanh(const Tensor& x) {
  double k = detail::fault_scale(testing::AdjointFault::tanh);
  return detail::unary(x, [](double v) { return std::tanh(v); }, [k](double, double y) { return k * (1.0 - y * y); });
}

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  double k = detail::fault_scale(testing::AdjointFault::sigmoid);
  return detail::unary(x, [](double v) { return sigmoid(v); }, [k](double, double y) { return k * y * (1.0 - y); });
}
inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}
// Subgradient 0 at the kink.
inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return make_op(std::move(shape), x.to_vector(), {x}, [](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.numel()}); }

// Contiguous run [begin, begin+count) of the row-major data, viewed as `shape`.
inline Tensor slice(const Tensor& x, std::size_t begin, std::size_t count, std::optional<Shape> shape = {}) {
  if (count == 0 || begin + count > x.numel())
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside tensor of shape " + shape_str(x.shape()));
  Shape out_shape = shape ? *shape : Shape{count};
  if (shape_numel(out_shape) != count) throw DimensionError("slice: target shape " + shape_str(out_shape));
  auto xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin),
                          xv.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return make_op(std::move(out_shape), std::move(out), {x}, [begin](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin + i] += self.grad[i];
  });
}

inline Tensor element(const Tensor& x, std::size_t i) { return slice(x, i, 1); }

// Row i of a matrix as a vector.
inline Tensor row(const Tensor& m, std::size_t i) {
  if (m.rank() != 2 || i >= m.dim(0))
    throw DimensionError("row: index " + std::to_string(i) + " for shape " + shape_str(m.shape()));
  return slice(m, i * m.dim(1), m.dim(1));
}

// Concatenates vectors (any shape, taken flat) into one vector.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (auto& p : parts) {
    offsets.push_back(out.size());
    auto v = p.data();
    out.insert(out.end(), v.begin(), v.end());
  }
  Shape s{out.size()};
  return make_op(std::move(s), std::move(out), parts, [offsets](detail::Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto* g = detail::grad_of(*self.parents[k]);
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[offsets[k] + i];
    }
  });
}

inline Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(m.shape()));
  std::size_t r = m.dim(0), c = m.dim(1);
  auto mv = m.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = mv[i * c + j];
  return make_op({c, r}, std::move(out), {m}, [r, c](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

// out[m×n] += a[m×k] · b[k×n]
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data(), b.data(), out, m, k, n);
  double fault = detail::fault_scale(testing::AdjointFault::matmul);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n, fault](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    const auto& g = self.grad;
    if (auto* ga = detail::grad_of(pa)) {
      // dA = G · Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb.value[p * n + j];
          (*ga)[i * k + p] += fault * acc;
        }
    }
    if (auto* gb = detail::grad_of(pb)) {
      // dB = Aᵀ · G
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double av = pa.value[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * g[i * n + j];
        }
    }
  });
}

// Matrix times vector: [m×k] · [k] -> [m].
inline Tensor matvec(const Tensor& m, const Tensor& v) {
  return reshape(matmul(m, reshape(v, {v.numel(), 1})), {m.dim(0)});
}

// Adds vector v[c] to every row of m[r×c]. The only broadcast besides scalars,
// and it is explicit.
inline Tensor add_rowwise(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.numel() != m.dim(1))
    throw DimensionError("add_rowwise: shape mismatch " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
  std::size_t r = m.dim(0), c = m.dim(1);
  auto mv = m.data();
  auto vv = v.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + vv[j];
  return make_op({r, c}, std::move(out), {m, v}, [r, c](detail::Node& self) {
    if (auto* gm = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < r * c; ++i) (*gm)[i] += self.grad[i];
    if (auto* gv = detail::grad_of(*self.parents[1]))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gv)[j] += self.grad[i * c + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  auto xv = x.data();
  double s = 0.0;
  for (double v : xv) s += v;
  return make_op({1}, {s}, {x}, [](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    for (auto& gi : *g) gi += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.reduced.push_back(s[i]);
  if (r.reduced.empty()) r.reduced.push_back(1);
  return r;
}

}  // namespace detail

inline Tensor sum(const Tensor& x, std::size_t axis) {
  auto sp = detail::split_axis(x.shape(), axis, "sum");
  auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += xv[(o * sp.extent + e) * sp.inner + i];
  return make_op(sp.reduced, std::move(out), {x}, [sp](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) (*g)[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

inline Tensor mean(const Tensor& x, std::size_t axis) {
  auto extent = detail::split_axis(x.shape(), axis, "mean").extent;
  return scale(sum(x, axis), 1.0 / static_cast<double>(extent));
}

// Index of the maximum along an axis (first on ties). Not differentiable;
// the result is a constant holding integral values.
inline Tensor max_index(const Tensor& x, std::size_t axis) {
  auto sp = detail::split_axis(x.shape(), axis, "max_index");
  auto xv = x.data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = xv[o * sp.extent * sp.inner + i];
      for (std::size_t e = 1; e < sp.extent; ++e) {
        double v = xv[(o * sp.extent + e) * sp.inner + i];
        if (v > bv) bv = v, best = e;
      }
      out[o * sp.inner + i] = static_cast<double>(best);
    }
  return Tensor::from(sp.reduced, std::move(out), false);
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

// ---------------------------------------------------------------------------
// Softmax family (over all entries, taken flat)

inline std::vector<double> softmax_values(std::span<const double> x) {
  detail::require_finite(x, "softmax");
  double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= z;
  return out;
}

inline Tensor softmax(const Tensor& x) {
  auto y = softmax_values(x.data());
  return make_op(x.shape(), std::move(y), {x}, [](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < self.value.size(); ++i) (*g)[i] += self.value[i] * (self.grad[i] - dot);
  });
}

inline Tensor log_softmax(const Tensor& x) {
  auto xv = x.data();
  detail::require_finite(xv, "log_softmax");
  double mx = *std::max_element(xv.begin(), xv.end());
  double z = 0.0;
  for (double v : xv) z += std::exp(v - mx);
  double lz = mx + std::log(z);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] - lz;
  return make_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto* g = detail::grad_of(*self.parents[0]);
    if (!g) return;
    double gs = 0.0;
    for (double v : self.grad) gs += v;
    for (std::size_t i = 0; i < self.value.size(); ++i) (*g)[i] += self.grad[i] - std::exp(self.value[i]) * gs;
  });
}

// ---------------------------------------------------------------------------
// Backward pass

// Reachable differentiable nodes of one loss in creation order. Replaying the
// adjoints in reverse visits each recorded operation exactly once.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root) {
    ComputationTape tape;
    std::vector<detail::Node*> stack{root.handle().get()};
    std::unordered_set<const detail::Node*> seen{root.handle().get()};
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      tape.nodes_.push_back(n);
      for (auto& p : n->parents)
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
    return tape;
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t operation_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](auto* n) { return !n->is_leaf(); }));
  }

  // Seeds d(root)/d(root) = 1 and propagates. Intermediate grads are reset
  // first; leaf grads accumulate across calls.
  void replay() {
    for (auto* n : nodes_)
      if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    auto* root = nodes_.back();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (!(*it)->is_leaf()) (*it)->adjoint(**it);
  }

 private:
  std::vector<detail::Node*> nodes_;
};

// Populates grads of every requires_grad ancestor of a scalar loss. Leaf
// gradients accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward: loss does not depend on any differentiable tensor");
  ComputationTape::record(loss).replay();
}

}  // namespace kavan
