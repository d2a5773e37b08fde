#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "regmatch/autograd.hpp"
#include "regmatch/errors.hpp"

using namespace regmatch;
using ag::Var;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Tensor t(s);
  for (double& x : t.values()) x = g(rng);
  return t;
}

// Central-difference gradient of f with respect to every entry of x.
Tensor numeric_grad(Var& x, const std::function<double()>& f, double h = 1e-6) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double& slot = x.mutable_value().data()[i];
    const double saved = slot;
    slot = saved + h;
    const double up = f();
    slot = saved - h;
    const double down = f();
    slot = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

void expect_grad(const std::function<Var()>& build, std::vector<Var> inputs, double tol = 1e-7) {
  for (auto& v : inputs) v.zero_grad();
  build().backward();
  for (auto& v : inputs) {
    const Tensor analytic = v.grad();
    const Tensor numeric = numeric_grad(v, [&] {
      ag::NoGradGuard no_grad;
      return build().value().item();
    });
    ASSERT_FALSE(analytic.empty());
    EXPECT_LT(max_abs_diff(analytic, numeric), tol);
  }
}

Var total(const Var& x) { return ag::sum(ag::sum(ag::sum(x, 2), 1), 0); }

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t(Shape{2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  t(1, 2, 3) = 7.0;
  EXPECT_EQ(t.batch_slice(1).at(2, 3), 7.0);
  EXPECT_EQ(t.transposed().shape(), (Shape{2, 4, 3}));
  EXPECT_THROW(Tensor(Shape{1, 2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Autograd, MatmulMatchesNaiveProduct) {
  std::mt19937_64 rng(1);
  const Tensor a = randn(Shape{3, 4, 5}, rng), b = randn(Shape{3, 5, 2}, rng);
  const Tensor c = ag::matmul(Var::constant(a), Var::constant(b)).value();
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += a(n, i, k) * b(n, k, j);
        EXPECT_NEAR(c(n, i, j), s, 1e-12);
      }
}

TEST(Autograd, MatmulBroadcastAndTransposeGradients) {
  std::mt19937_64 rng(2);
  Var a = Var::parameter(randn(Shape{3, 4, 5}, rng));
  Var w = Var::parameter(randn(Shape{1, 2, 5}, rng));
  const Tensor r = randn(Shape{3, 4, 2}, rng);
  expect_grad([&] { return total(ag::matmul(a, w, false, true) * Var::constant(r)); }, {a, w});
  Var b = Var::parameter(randn(Shape{3, 4, 6}, rng));
  const Tensor r2 = randn(Shape{3, 5, 6}, rng);
  expect_grad([&] { return total(ag::matmul(a, b, true, false) * Var::constant(r2)); }, {a, b});
}

TEST(Autograd, ElementwiseGradients) {
  std::mt19937_64 rng(3);
  Var a = Var::parameter(randn(Shape{2, 3, 4}, rng));
  Var b = Var::parameter(randn(Shape{2, 1, 4}, rng));
  Tensor pos = randn(Shape{2, 3, 4}, rng);
  for (double& x : pos.values()) x = std::abs(x) + 0.5;
  Var c = Var::parameter(pos);
  expect_grad([&] { return total(ag::tanh(a) * b + ag::sigmoid(a - b) / c); }, {a, b, c});
  expect_grad([&] { return total(ag::sqrt(c) + ag::square(a) + ag::scale(ag::shift(a, 1.0), 3.0)); }, {a, c});
}

TEST(Autograd, SoftmaxMaskGivesExactZeroWeight) {
  std::mt19937_64 rng(4);
  const Tensor x = randn(Shape{2, 4, 3}, rng);
  Tensor mask(Shape{2, 4, 1}, 1.0);
  mask(1, 3, 0) = 0.0;
  const Tensor y = ag::softmax(Var::constant(x), 1, &mask).value();
  EXPECT_EQ(y(1, 3, 0), 0.0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < 4; ++r) s += y(b, r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  Tensor none(Shape{1, 4, 1}, 0.0);
  EXPECT_THROW(ag::softmax(Var::constant(x.batch_slice(0)), 1, &none), DomainError);

  Var p = Var::parameter(x);
  const Tensor r = randn(Shape{2, 4, 3}, rng);
  expect_grad([&] { return total(ag::softmax(p, 1, &mask) * Var::constant(r)); }, {p});
}

TEST(Autograd, L2NormalizeZeroLineStaysZero) {
  Tensor x(Shape{1, 2, 3}, 0.0);
  x(0, 0, 0) = 3;
  x(0, 0, 1) = 4;
  Var v = Var::parameter(x);
  const Var y = ag::l2_normalize(v, 2, 0.0);
  EXPECT_DOUBLE_EQ(y.value()(0, 0, 0), 0.6);
  EXPECT_EQ(y.value()(0, 1, 2), 0.0);
  total(y).backward();
  EXPECT_EQ(v.grad()(0, 1, 0), 0.0);
}

TEST(Autograd, ShapeOpsGradients) {
  std::mt19937_64 rng(5);
  Var a = Var::parameter(randn(Shape{3, 4, 2}, rng));
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const Tensor r = randn(Shape{4, 4, 2}, rng);
  expect_grad([&] { return total(ag::gather(a, idx) * Var::constant(r)); }, {a});
  const Tensor r2 = randn(Shape{3, 2, 2}, rng);
  expect_grad([&] { return total(ag::slice(a, 1, 1, 2) * Var::constant(r2)); }, {a});
  const Tensor r3 = randn(Shape{3, 8, 2}, rng);
  expect_grad([&] {
    std::vector<Var> parts{a, ag::tanh(a)};
    return total(ag::concat(parts, 1) * Var::constant(r3));
  }, {a});
  const Tensor r4 = randn(Shape{1, 6, 4}, rng);
  expect_grad([&] { return total(ag::reshape(a, Shape{1, 6, 4}) * Var::constant(r4)); }, {a});
}

TEST(Autograd, EmbeddingGradientAccumulatesRepeatedIds) {
  std::mt19937_64 rng(6);
  Var table = Var::parameter(randn(Shape{1, 5, 3}, rng));
  const std::vector<std::size_t> ids{1, 3, 1, 0};
  const Var e = ag::embedding(table, ids, 2, 2);
  EXPECT_EQ(e.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(e.value()(1, 0, 2), table.value()(0, 1, 2));
  total(e).backward();
  EXPECT_EQ(table.grad()(0, 1, 0), 2.0);
  EXPECT_EQ(table.grad()(0, 2, 0), 0.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var a = Var::parameter(Tensor::scalar(2.0));
  {
    ag::NoGradGuard guard;
    const Var y = ag::square(a);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ag::square(a).requires_grad());
}

TEST(Autograd, KinkProbeSignatureTracksBranches) {
  Var a = Var::constant(Tensor::row(std::vector<double>{0.3, -0.2}));
  std::uint64_t first, second;
  double distance;
  {
    ag::KinkProbe probe;
    ag::relu(a);
    first = probe.signature();
    distance = probe.min_distance();
  }
  EXPECT_DOUBLE_EQ(distance, 0.2);
  a.mutable_value().data()[1] = 0.1;
  {
    ag::KinkProbe probe;
    ag::relu(a);
    second = probe.signature();
  }
  EXPECT_NE(first, second);
}

TEST(Autograd, ClampAndReluSubgradientAtBoundaryIsZero) {
  Var a = Var::parameter(Tensor::row(std::vector<double>{1.0, -1.0, 0.5, 0.0}));
  total(ag::clamp(a, -1.0, 1.0)).backward();
  EXPECT_EQ(a.grad().at(0, 0), 0.0);
  EXPECT_EQ(a.grad().at(0, 1), 0.0);
  EXPECT_EQ(a.grad().at(0, 2), 1.0);
  a.zero_grad();
  total(ag::relu(a)).backward();
  EXPECT_EQ(a.grad().at(0, 3), 0.0);
}
