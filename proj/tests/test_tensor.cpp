#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "kavan/io.hpp"
#include "kavan/tensor.hpp"
#include "support/finite_difference.hpp"

using namespace kavan;
using kavan::test::check_gradients;
using kavan::test::random_leaf;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto m = Tensor::matrix(2, 2, {3, 4, 5, 6});
  auto out = matmul(eye, m);
  EXPECT_EQ(out.shape(), (Shape{2, 2}));
  EXPECT_EQ(out.to_vector(), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  auto out = matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  EXPECT_EQ(out.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto a = random_leaf(rng, {3, 3});
  auto b = random_leaf(rng, {3, 3});
  auto r = check_gradients([&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, AnalyticValues) {
  EXPECT_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(square(Tensor::vector({-2, 3})).to_vector(), (std::vector<double>{4, 9}));
  EXPECT_DOUBLE_EQ(exp(Tensor::scalar(1.0)).item(), std::exp(1.0));
}

TEST(Elementwise, SigmoidSlopeAtZero) {
  auto x = Tensor::vector({0.0}, true);
  backward(sum(sigmoid(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Elementwise, ShapeMismatchIsRejected) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), DimensionError);
}

TEST(Elementwise, ScalarBroadcastsOverTensor) {
  auto out = add(Tensor::vector({1, 2, 3}), Tensor::scalar(10));
  EXPECT_EQ(out.to_vector(), (std::vector<double>{11, 12, 13}));
}

TEST(Elementwise, EveryOpPassesFiniteDifferenceCheck) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_leaf(rng, {6});
    auto b = random_leaf(rng, {6});
    auto s = random_leaf(rng, {1});
    EXPECT_LT(check_gradients([&] { return sum(add(a, b)); }, {a, b}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(sub(a, b)); }, {a, b}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(mul(a, b)); }, {a, b}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(mul(a, s)); }, {a, s}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(tanh(a)); }, {a}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(sigmoid(a)); }, {a}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(exp(a)); }, {a}).max_rel_error, 1e-6);
    EXPECT_LT(check_gradients([&] { return sum(square(a)); }, {a}).max_rel_error, 1e-6);
    // Compositions through softmax / exp: looser bound.
    auto w = random_leaf(rng, {6});
    EXPECT_LT(check_gradients([&] { return sum(mul(softmax(a), w)); }, {a, w}).max_rel_error, 1e-4);
    EXPECT_LT(check_gradients([&] { return sum(mul(log_softmax(a), w)); }, {a, w}).max_rel_error, 1e-4);
  }
}

TEST(Shape, TransposeSliceConcatGradients) {
  Rng rng(9);
  auto m = random_leaf(rng, {3, 4});
  auto v = random_leaf(rng, {4});
  auto w = random_leaf(rng, {7});
  EXPECT_LT(check_gradients([&] { return sum(square(transpose(m))); }, {m}).max_rel_error, 1e-6);
  EXPECT_LT(check_gradients([&] { return sum(mul(concat({slice(v, 1, 3), row(m, 1)}), w)); }, {m, v, w}).max_rel_error,
            1e-6);
  EXPECT_LT(check_gradients([&] { return sum(square(add_rowwise(m, v))); }, {m, v}).max_rel_error, 1e-6);
}

TEST(Softmax, UniformInput) {
  auto y = softmax(Tensor::zeros({4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, MatchesDirectEvaluation) {
  auto y = softmax(Tensor::vector({1, 2, 3}));
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(y[1], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(y[2], std::exp(3.0) / z, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalizationProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto n = static_cast<std::size_t>(rng.uniform_int(1, 60));
    auto x = rng.uniform_tensor({n}, -30, 30, false);
    double c = rng.uniform(-100, 100);
    auto y = softmax(x);
    auto ys = softmax(add_scalar(x, c));
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GT(y[i], 0.0);
      EXPECT_NEAR(y[i], ys[i], 1e-12);
      total += y[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Softmax, RejectsNonFiniteInput) {
  EXPECT_THROW(softmax(Tensor::vector({0.0, std::nan("")})), NumericInputError);
  EXPECT_THROW(softmax(Tensor::vector({0.0, INFINITY})), NumericInputError);
}

TEST(Reduce, SumMeanMaxIndex) {
  EXPECT_EQ(sum(Tensor::vector({1, 2, 3})).item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(Tensor::full({5, 3}, 2.5)).item(), 2.5);
  auto m = Tensor::matrix(2, 3, {1, 9, 3, 7, 2, 8});
  EXPECT_EQ(sum(m, 0).to_vector(), (std::vector<double>{8, 11, 11}));
  EXPECT_EQ(sum(m, 1).to_vector(), (std::vector<double>{13, 17}));
  EXPECT_EQ(max_index(m, 1).to_vector(), (std::vector<double>{1, 2}));
  EXPECT_FALSE(max_index(Tensor::vector({1, 2}, true), 0).requires_grad());
  EXPECT_THROW(sum(m, 2), DimensionError);
}

TEST(Reduce, MeanGradientIsOneOverN) {
  auto x = Tensor::zeros({8}, true);
  backward(mean(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 8.0);
}

TEST(Reduce, AxisGradients) {
  Rng rng(21);
  auto x = random_leaf(rng, {2, 3, 4});
  auto w = random_leaf(rng, {2, 4});
  EXPECT_LT(check_gradients([&] { return sum(mul(mean(x, 1), w)); }, {x, w}).max_rel_error, 1e-6);
}

TEST(Backward, LinearCase) {
  auto w = Tensor::vector({0.5, -1.0, 2.0}, true);
  auto x = Tensor::vector({3.0, 4.0, 5.0});
  backward(sum(mul(w, x)));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), x.to_vector());
}

TEST(Backward, DisconnectedParameterKeepsZeroGrad) {
  auto used = Tensor::vector({1.0, 2.0}, true);
  auto unused = Tensor::vector({3.0, 4.0}, true);
  backward(sum(square(used)));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto w = Tensor::vector({1.0, -2.0}, true);
  auto loss = sum(square(w));
  backward(loss);
  backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], -8.0);
  w.zero_grad();
  EXPECT_EQ(w.grad()[0], 0.0);
}

TEST(Backward, RejectsNonScalarAndConstantLoss) {
  auto w = Tensor::vector({1.0, 2.0}, true);
  EXPECT_THROW(backward(square(w)), ContractError);
  EXPECT_THROW(backward(sum(Tensor::vector({1.0, 2.0}))), ContractError);
}

TEST(Tape, EachOperationRecordedOnce) {
  auto w = Tensor::vector({0.3, -0.7}, true);
  auto shared = tanh(w);                    // 1 op, used twice below
  auto loss = sum(add(shared, shared));     // 2 ops
  auto tape = ComputationTape::record(loss);
  EXPECT_EQ(tape.operation_count(), 3u);
  EXPECT_EQ(tape.size(), 4u);  // plus the leaf
  backward(loss);
  for (std::size_t i = 0; i < 2; ++i) {
    double t = std::tanh(w[i]);
    EXPECT_NEAR(w.grad()[i], 2 * (1 - t * t), 1e-15);
  }
}

TEST(Tape, ReplayIsDeterministic) {
  auto run = [] {
    Rng rng(77);
    auto a = random_leaf(rng, {4, 5});
    auto b = random_leaf(rng, {5, 3});
    auto loss = sum(softmax(flatten(tanh(matmul(a, b)))));
    auto weighted = sum(mul(flatten(matmul(a, b)), Tensor::full({12}, 0.1)));
    backward(add(loss, weighted));
    auto g = a.grad();
    return std::vector<double>(g.begin(), g.end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, InvariantsAndErrors) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from({0}, {}), DimensionError);
  auto t = Tensor::zeros({2, 3}, true);
  EXPECT_EQ(t.grad().size(), t.numel());
  auto op = add(t, t);
  EXPECT_THROW(op.mutable_data(), ContractError);
}

TEST(TensorJson, RoundTripIsBitExact) {
  Rng rng(1);
  auto t = rng.uniform_tensor({3, 4}, -1e3, 1e3, false);
  auto text = tensor_to_json(t).dump();
  auto back = tensor_from_json(json::parse(text));
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.to_vector(), t.to_vector());
  EXPECT_EQ(json::parse(text).at("shape"), json::parse("[3,4]"));
}
