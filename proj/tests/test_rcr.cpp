#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "regmatch/errors.hpp"
#include "regmatch/rcr.hpp"

using namespace regmatch;
using oracle::Mat;
using oracle::Vec;

namespace {

struct Rig {
  ParameterSet params;
  AlignmentEncoder align;
  RcrParams rcr;
  RcrConfig config;

  Rig(std::uint64_t seed, std::size_t d, std::size_t m) {
    config.dim = d;
    config.align_dim = m;
    config.e_hidden = 5;
    config.lambda_hidden = 3;
    std::mt19937_64 rng(seed);
    align = AlignmentEncoder::create(params, "align", d, m, rng);
    rcr = RcrParams::create(params, "rcr", config, rng);
  }
};

ag::Var constant(const Mat& m) { return ag::Var::constant(oracle::to_tensor(m)); }

}  // namespace

TEST(Alignment, MatchesLoopOracle) {
  Rig s(1, 8, 4);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Mat x = oracle::random_mat(rng, 2, 8);
    auto a = build_alignment(x[0], x[1], s.align.projection.weight.value());
    Vec ref = oracle::alignment(x[0], x[1], s.align.projection);
    ASSERT_EQ(a.values.size(), 4u);
    EXPECT_FALSE(a.degenerate);
    double n = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(a.values[k], ref[k], 1e-12);
      n += a.values[k] * a.values[k];
    }
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
    auto swapped = build_alignment(x[1], x[0], s.align.projection.weight.value());
    EXPECT_EQ(swapped.values, a.values);
  }
}

TEST(Alignment, IdenticalInputsAreDegenerate) {
  Rig s(3, 6, 3);
  Vec q{1, 2, 3, 4, 5, 6};
  auto a = build_alignment(q, q, s.align.projection.weight.value());
  EXPECT_TRUE(a.degenerate);
  for (double x : a.values) EXPECT_EQ(x, 0.0);

  // Batched path: the degenerate row stays zero with zero gradient.
  auto qv = ag::Var::parameter(oracle::to_tensor({q}));
  auto out = build_alignment(qv, constant({q}), s.align);
  for (double x : out.value().values()) EXPECT_EQ(x, 0.0);
  ag::sum(ag::sum(out, 2), 1).backward();
  for (double g : qv.grad().values()) EXPECT_EQ(g, 0.0);
}

TEST(Regulate, ZeroMlpIsIdentity) {
  Rig s(4, 6, 4);
  s.rcr.zero();
  std::mt19937_64 rng(5);
  auto a = oracle::random_mat(rng, 1, 4)[0];
  AttentionFactors prev{{0.5, -1.0, 1.0, 0.0, -0.25, 0.75}, 3.5};
  auto out = regulate(a, prev, s.rcr, true);
  EXPECT_EQ(out.e, prev.e);
  EXPECT_EQ(out.lambda, prev.lambda);
}

TEST(Regulate, LambdaFloorsAtZero) {
  Rig s(6, 4, 4);
  s.rcr.zero();
  s.rcr.lambda_out.bias.mutable_value().fill(-20.0);
  Vec a{0.5, 0.5, 0.5, 0.5};
  auto out = regulate(a, AttentionFactors::initial(4, 10.0), s.rcr, true);
  EXPECT_EQ(out.lambda, 0.0);
}

TEST(Regulate, ClipMatchesOracle) {
  Rig s(7, 6, 4);
  std::mt19937_64 rng(8);
  for (auto& [name, var] : s.params.entries())
    for (double& x : var.mutable_value().values()) x *= 4.0;
  int clipped = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Vec a = oracle::alignment(oracle::random_mat(rng, 1, 6)[0], oracle::random_mat(rng, 1, 6)[0],
                              s.align.projection);
    AttentionFactors prev{oracle::uniform_mat(rng, 1, 6, 0.9, 1.0)[0], 10.0};
    for (bool residual : {true, false}) {
      auto out = regulate(a, prev, s.rcr, residual);
      auto ref = oracle::regulate(a, {prev.e, prev.lambda}, s.rcr, residual);
      for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_NEAR(out.e[k], ref.e[k], 1e-12);
        EXPECT_LE(out.e[k], 1.0);
        EXPECT_GE(out.e[k], -1.0);
        clipped += std::abs(out.e[k]) == 1.0;
      }
      EXPECT_NEAR(out.lambda, ref.lambda, 1e-12);
      EXPECT_GE(out.lambda, 0.0);
    }
  }
  EXPECT_GT(clipped, 0);
}

TEST(Regulate, FuzzedStepsStayInRange) {
  Rig s(9, 5, 3);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g(0.0, 3.0);
  for (auto& [name, var] : s.params.entries())
    for (double& x : var.mutable_value().values()) x = g(rng);
  AttentionFactors f = AttentionFactors::initial(5);
  for (int step = 0; step < 2000; ++step) {
    Vec a = oracle::random_mat(rng, 1, 3)[0];
    f = regulate(a, f, s.rcr, step % 3 != 0);
    for (double e : f.e) ASSERT_TRUE(e >= -1.0 && e <= 1.0);
    ASSERT_GE(f.lambda, 0.0);
  }
}

TEST(Refine, ZeroMlpReproducesAttend) {
  Rig s(11, 6, 4);
  s.rcr.zero();
  std::mt19937_64 rng(12);
  auto t = constant(oracle::random_mat(rng, 3, 6));
  auto v = constant(oracle::random_mat(rng, 5, 6));
  auto f0 = FactorState::initial(10.0);
  auto base = attend(t, v, f0);
  auto r = refine_attention(t, v, base.attended, f0, s.align, s.rcr, s.config);
  EXPECT_EQ(max_abs_diff(r.attention.attended.value(), base.attended.value()), 0.0);
  EXPECT_EQ(max_abs_diff(r.attention.weights.value(), base.weights.value()), 0.0);
}

TEST(Refine, MatchesComposedOracle) {
  Rig s(13, 6, 4);
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    Mat t = oracle::random_mat(rng, 3, 6), v = oracle::random_mat(rng, 4, 6);
    auto f0 = FactorState::initial(10.0);
    auto base = attend(constant(t), constant(v), f0);
    auto r = refine_attention(constant(t), constant(v), base.attended, f0, s.align, s.rcr, s.config);

    Mat prev_att = oracle::from_tensor(base.attended.value());
    Mat e;
    Vec lambda;
    for (std::size_t j = 0; j < 3; ++j) {
      Vec a = oracle::alignment(t[j], prev_att[j], s.align.projection);
      auto f = oracle::regulate(a, {Vec(6, 1.0), 10.0}, s.rcr, true);
      e.push_back(f.e);
      lambda.push_back(f.lambda);
    }
    auto ref = oracle::attend(t, v, e, lambda, 3);
    const auto& got = r.attention.attended.value();
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(r.factors.lambda.value()(0, j, 0), lambda[j], 1e-12);
      for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(got(0, j, k), ref.attended[j][k], 1e-9);
    }
  }
}

TEST(Refine, QueriesGetTheirOwnTemperature) {
  Rig s(15, 6, 4);
  std::mt19937_64 rng(16);
  auto t = constant(oracle::random_mat(rng, 3, 6));
  auto v = constant(oracle::random_mat(rng, 4, 6));
  auto f0 = FactorState::initial(10.0);
  auto base = attend(t, v, f0);
  auto r = refine_attention(t, v, base.attended, f0, s.align, s.rcr, s.config);
  const auto& l = r.factors.lambda.value();
  EXPECT_NE(l(0, 0, 0), l(0, 1, 0));
  EXPECT_NE(l(0, 1, 0), l(0, 2, 0));
}

TEST(Refine, QuerySourceReadsQueries) {
  Rig s(17, 6, 4);
  s.config.source = FactorSource::kQuery;
  ParameterSet p;
  std::mt19937_64 rng(18);
  auto q_params = RcrParams::create(p, "q", RcrConfig{6, 6, 5, 3, true, FactorSource::kQuery}, rng);
  Mat t = oracle::random_mat(rng, 2, 6), v = oracle::random_mat(rng, 3, 6);
  auto f0 = FactorState::initial(10.0);
  auto base = attend(constant(t), constant(v), f0);
  auto r = refine_attention(constant(t), constant(v), base.attended, f0, s.align, q_params,
                            RcrConfig{6, 6, 5, 3, true, FactorSource::kQuery});
  for (std::size_t j = 0; j < 2; ++j) {
    auto f = oracle::regulate(t[j], {Vec(6, 1.0), 10.0}, q_params, true);
    EXPECT_NEAR(r.factors.lambda.value()(0, j, 0), f.lambda, 1e-12);
  }
}
