#include <gtest/gtest.h>

#include <cmath>

#include "grerank/diff.hpp"
#include "grerank/error.hpp"
#include "grerank/gradcheck.hpp"
#include "grerank/rng.hpp"

namespace d = grerank::diff;
using d::Array;
using d::Node;
using d::Shape;

namespace {

Array random_array(Shape shape, grerank::Rng& rng, double lo = -3.0, double hi = 3.0) {
  Array a(std::move(shape));
  for (double& x : a.values()) x = lo + (hi - lo) * rng.uniform();
  return a;
}

// Weighted sum with fixed irregular weights so every output entry matters.
Node probe(const Node& y) {
  Array w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7) - 0.05 * i;
  return d::sum(d::mul(y, d::constant(w)));
}

void expect_grad(const std::function<Node(std::span<const Node>)>& f, std::vector<Array> inputs, double tol = 1e-5) {
  const auto r = d::check_gradient(f, std::move(inputs));
  EXPECT_LT(r.max_rel_error, tol) << "abs " << r.max_abs_error;
}

}  // namespace

TEST(Diff, MatmulIdentity) {
  const Node i2 = d::constant(Array::matrix(2, 2, {1, 0, 0, 1}));
  const Node m = d::constant(Array::matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(d::matmul(i2, m).value(), m.value());
}

TEST(Diff, LogExpInverse) {
  const Node x = d::constant(Array::vector({0.3}));
  EXPECT_NEAR(d::log(d::exp(x)).value()[0], 0.3, 1e-15);
}

TEST(Diff, SumOfSquaresGradient) {
  const Node x = d::parameter(Array::vector({1, 2, 3}));
  d::backward(d::sum(d::mul(x, x)));
  EXPECT_EQ(x.grad(), Array::vector({2, 4, 6}));
}

TEST(Diff, SoftmaxSymmetric) {
  for (double c : {-50.0, 0.0, 3.7, 700.0}) {
    const Node s = d::softmax(d::constant(Array::vector({c, c, c})), 0);
    for (double v : s.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(Diff, SoftmaxSaturated) {
  const Node s = d::softmax(d::constant(Array::vector({20, 0})), 0);
  EXPECT_NEAR(s.value()[1], 2.0611536181902035814e-9, 1e-22);
  EXPECT_NEAR(s.value()[0], 0.99999999793884638181, 1e-15);
}

TEST(Diff, SoftmaxNllGradient) {
  grerank::Rng rng(4);
  expect_grad([](std::span<const Node> p) { return d::neg(d::log(d::take(d::softmax(p[0], 0), std::vector<std::size_t>{2}))); },
              {random_array({5}, rng)});
}

TEST(Diff, MaxElementwiseValues) {
  const Node a = d::constant(Array::vector({1, 5}));
  const Node b = d::constant(Array::vector({3, 2}));
  EXPECT_EQ(d::max_elementwise({a, b}).value(), Array::vector({3, 5}));
}

TEST(Diff, MaxElementwiseTieGoesToFirst) {
  const Node x1 = d::parameter(Array::vector({1.5, -2}));
  const Node x2 = d::parameter(Array::vector({1.5, -2}));
  d::backward(probe(d::max_elementwise({x1, x2})));
  EXPECT_NEAR(x1.grad()[0], 0.3, 1e-15);
  EXPECT_NEAR(x1.grad()[1], 0.42, 1e-15);
  EXPECT_EQ(x2.grad(), Array(Shape{2}, 0.0));
}

TEST(Diff, MaxOfSoftmaxDraws) {
  grerank::Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Node> draws;
    for (int j = 0; j < 4; ++j) draws.push_back(d::softmax(d::constant(random_array({6}, rng, -8, 8)), 0));
    const Node m = d::max_elementwise(std::span<const Node>(draws));
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_LE(m.value()[i], 1.0);
      for (const Node& dr : draws) EXPECT_GE(m.value()[i], dr.value()[i]);
    }
  }
}

TEST(Diff, BackwardOnConstantLeavesZeroGrads) {
  const Node c = d::constant(Array::vector({1, 2}));
  const Node y = d::sum(d::exp(c));
  d::backward(y);
  EXPECT_EQ(c.grad(), Array(Shape{2}, 0.0));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Diff, LogSumExpCompositeGradient) {
  grerank::Rng rng(2);
  expect_grad([](std::span<const Node> p) { return d::log(d::sum(d::exp(p[0]))); }, {random_array({6}, rng)});
  const Node x = d::constant(Array::vector({1, 2, 3}));
  EXPECT_NEAR(d::logsumexp(x).item(), 3.4076059644443803045, 1e-14);
}

TEST(Diff, TwoBackwardCallsDoubleGrads) {
  const Node x = d::parameter(Array::vector({0.5, -1.0}));
  const Node y = d::sum(d::mul(x, x));
  d::backward(y);
  const Array once = x.grad();
  d::backward(y);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * once[i]);
  d::reset_grad(y);
  EXPECT_EQ(x.grad(), Array(Shape{2}, 0.0));
}

TEST(Diff, GradShapeEqualsValueShape) {
  const Node a = d::parameter(Array::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const Node b = d::parameter(Array::matrix(3, 2, {1, 0, 0, 1, 1, 1}));
  d::backward(d::sum(d::matmul(a, b)));
  EXPECT_EQ(a.grad().shape(), a.shape());
  EXPECT_EQ(b.grad().shape(), b.shape());
}

TEST(Diff, TopologicalOrderIsParentsFirst) {
  const Node x = d::parameter(Array::vector({1, 2}));
  const Node y = d::exp(x);
  const Node z = d::add(d::mul(y, x), y);
  const auto order = d::topological_order(d::sum(z));
  auto pos = [&](const Node& n) { return std::find(order.begin(), order.end(), n) - order.begin(); };
  EXPECT_LT(pos(x), pos(y));
  EXPECT_LT(pos(y), pos(z));
}

TEST(Diff, Errors) {
  EXPECT_THROW(d::log(d::constant(Array::vector({1, 0}))), grerank::DomainError);
  EXPECT_THROW(d::divide(d::constant(Array::vector({1, 1})), d::constant(Array::vector({2, 0}))), grerank::DomainError);
  EXPECT_THROW(d::add(d::constant(Array::vector({1, 1})), d::constant(Array::vector({1, 1, 1}))), grerank::ContractError);
  EXPECT_THROW(d::backward(d::parameter(Array::vector({1, 2}))), grerank::ContractError);
}

// Every differentiable op against central differences on inputs in [-3, 3].
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  grerank::Rng rng(100 + GetParam());
  const Array a = random_array({3, 4}, rng);
  const Array b = random_array({3, 4}, rng);
  const Array pos = random_array({3, 4}, rng, 0.5, 3.0);
  using F = std::function<Node(std::span<const Node>)>;
  const std::vector<std::pair<F, std::vector<Array>>> cases = {
      {[](auto p) { return probe(d::add(p[0], p[1])); }, {a, b}},
      {[](auto p) { return probe(d::sub(p[0], p[1])); }, {a, b}},
      {[](auto p) { return probe(d::mul(p[0], p[1])); }, {a, b}},
      {[](auto p) { return probe(d::divide(p[0], p[1])); }, {a, pos}},
      {[](auto p) { return probe(d::mul(p[0], p[1])); }, {a, Array::scalar(1.7)}},
      {[](auto p) { return probe(d::add_scalar(d::scale(p[0], -2.5), 0.3)); }, {a}},
      {[](auto p) { return probe(d::neg(p[0])); }, {a}},
      {[](auto p) { return probe(d::exp(p[0])); }, {a}},
      {[](auto p) { return probe(d::log(p[0])); }, {pos}},
      {[](auto p) { return probe(d::tanh(p[0])); }, {a}},
      {[](auto p) { return probe(d::sigmoid(p[0])); }, {a}},
      {[](auto p) { return probe(d::sqrt(p[0])); }, {pos}},
      {[](auto p) { return probe(d::matmul(p[0], d::transpose(p[1]))); }, {a, b}},
      {[](auto p) { return probe(d::matmul(d::reshape(p[0], {12}), d::reshape(p[1], {12, 1}))); }, {a, b}},
      {[](auto p) { return probe(d::matmul(d::transpose(p[0]), d::reshape(d::slice(d::reshape(p[1], {12}), 0, 3), {3}))); },
       {a, b}},
      {[](auto p) { return probe(d::sum(p[0], 0)); }, {a}},
      {[](auto p) { return probe(d::sum(p[0], 1)); }, {a}},
      {[](auto p) { return d::mean(d::mul(p[0], p[0])); }, {a}},
      {[](auto p) { return probe(d::mean(p[0], 1)); }, {a}},
      {[](auto p) { return d::max(d::mul(p[0], p[1])); }, {a, b}},
      {[](auto p) { return probe(d::softmax(p[0], 1)); }, {a}},
      {[](auto p) { return probe(d::softmax(p[0], 0)); }, {a}},
      {[](auto p) { return probe(d::log_softmax(p[0], 1)); }, {a}},
      {[](auto p) { return d::logsumexp(p[0]); }, {a}},
      {[](auto p) { return probe(d::max_elementwise({p[0], p[1], d::scale(p[0], 0.5)})); }, {a, b}},
      {[](auto p) { return probe(d::concat({p[0], p[1]}, 0)); }, {a, b}},
      {[](auto p) { return probe(d::concat({p[0], p[1]}, 1)); }, {a, b}},
      {[](auto p) { return probe(d::gather_rows(p[0], std::vector<std::ptrdiff_t>{2, -1, 0, 2})); }, {a}},
      {[](auto p) { return probe(d::take(p[0], std::vector<std::size_t>{11, 0, 5, 5})); }, {a}},
      {[](auto p) { return probe(d::index_add(d::reshape(p[0], {12}), std::vector<std::size_t>{0, 1, 2, 0, 1, 2, 3, 3, 3, 4, 4, 0}, 5)); },
       {a}},
      {[](auto p) { return probe(d::slice(p[0], 1, 3)); }, {a}},
  };
  for (std::size_t c = 0; c < cases.size(); ++c) {
    SCOPED_TRACE("case " + std::to_string(c));
    expect_grad(cases[c].first, cases[c].second);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 3));
