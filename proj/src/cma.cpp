#include "regmatch/cma.hpp"

#include <cmath>

#include "regmatch/errors.hpp"

namespace regmatch {

using ag::Var;

AttentionFactors AttentionFactors::initial(std::size_t dim, double lambda) {
  return {std::vector<double>(dim, 1.0), lambda};
}

void AttentionFactors::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw DomainError("temperature must be finite and >= 0, got " + std::to_string(lambda));
  }
  for (double v : e) {
    if (!(v >= -1.0 && v <= 1.0)) throw DomainError("channel weight outside [-1, 1]");
  }
}

FactorState FactorState::initial(double lambda) {
  return {Var(), Var::constant(Tensor::scalar(lambda))};
}

FactorState FactorState::from(std::span<const AttentionFactors> per_query) {
  if (per_query.empty()) throw DomainError("no attention factors");
  const std::size_t q = per_query.size();
  const std::size_t d = per_query[0].e.size();
  Tensor e(Shape{1, q, d});
  Tensor lambda(Shape{1, q, 1});
  for (std::size_t j = 0; j < q; ++j) {
    per_query[j].validate();
    if (per_query[j].e.size() != d) throw ShapeError("ragged channel weight vectors");
    for (std::size_t k = 0; k < d; ++k) e(0, j, k) = per_query[j].e[k];
    lambda(0, j, 0) = per_query[j].lambda;
  }
  return {Var::constant(std::move(e)), Var::constant(std::move(lambda))};
}

double weighted_cosine(std::span<const double> v, std::span<const double> t,
                       std::span<const double> e) {
  if (v.size() != t.size() || v.size() != e.size()) throw ShapeError("weighted_cosine size mismatch");
  double vv = 0.0, tt = 0.0, dot = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    vv += v[k] * v[k];
    tt += t[k] * t[k];
    dot += v[k] * (e[k] * t[k]);
  }
  if (vv == 0.0 || tt == 0.0) throw DomainError("cosine of a zero-norm vector");
  return dot / (std::sqrt(vv) * std::sqrt(tt));
}

double cosine(std::span<const double> v, std::span<const double> t) {
  std::vector<double> ones(v.size(), 1.0);
  return weighted_cosine(v, t, ones);
}

AttentionOutput attend(const Var& queries, const Var& keys, const FactorState& factors,
                       const AttentionMasks& masks) {
  const Shape& qs = queries.shape();
  const Shape& ks = keys.shape();
  if (qs.cols != ks.cols) {
    throw ShapeError("query dim " + std::to_string(qs.cols) + " != key dim " + std::to_string(ks.cols));
  }
  const std::size_t nq = qs.rows;

  const Var qn = ag::l2_normalize(queries, 2, 0.0);
  const Var kn = ag::l2_normalize(keys, 2, 0.0);
  const Var weighted = factors.e.defined() ? qn * factors.e : qn;
  AttentionOutput out;
  out.raw = ag::matmul(kn, weighted, false, true);  // [P x K x Q]

  Var positive;
  Tensor query_row_mask;
  if (masks.queries) {
    query_row_mask = masks.queries->reshaped(Shape{masks.queries->batch(), 1, nq});
    positive = ag::relu(out.raw * Var::constant(query_row_mask));
  } else {
    positive = ag::relu(out.raw);
  }
  out.clamped = ag::l2_normalize(positive, 2, kClampNormFloor);

  Var lambda = factors.lambda;
  if (lambda.shape().rows > 1 || lambda.shape().batch > 1) {
    lambda = ag::reshape(lambda, Shape{lambda.shape().batch, 1, lambda.shape().rows});
  }
  out.weights = ag::softmax(out.clamped * lambda, 1, masks.keys);
  if (masks.queries) out.weights = out.weights * Var::constant(query_row_mask);
  out.attended = ag::matmul(out.weights, keys, true, false);
  return out;
}

namespace {

void require_nonzero_rows(const Tensor& t, const Tensor* mask, const char* what) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (mask && mask->at(r, 0) == 0.0) continue;
    double ss = 0.0;
    for (double v : t.row_span(0, r)) ss += v * v;
    if (ss == 0.0) throw DomainError(std::string(what) + " row " + std::to_string(r) + " has zero norm");
  }
}

void require_some_valid(const Tensor* mask) {
  if (!mask) return;
  for (double v : mask->values())
    if (v != 0.0) return;
  throw DomainError("all keys are masked");
}

AttentionResult run_single(const Tensor& queries, const Tensor& keys,
                           std::span<const AttentionFactors> factors, const Tensor* key_mask,
                           const Tensor* query_mask) {
  if (queries.batch() != 1 || keys.batch() != 1) throw ShapeError("single-instance attend expects matrices");
  if (factors.size() != queries.rows()) {
    throw ShapeError("need one factor set per query: " + std::to_string(factors.size()) + " vs " +
                     std::to_string(queries.rows()));
  }
  for (const auto& f : factors) {
    if (f.e.size() != queries.cols()) throw ShapeError("channel weight size != feature dim");
  }
  require_nonzero_rows(queries, query_mask, "query");
  require_nonzero_rows(keys, key_mask, "key");
  require_some_valid(key_mask);
  ag::NoGradGuard no_grad;
  const FactorState state = FactorState::from(factors);
  const auto out = attend(Var::constant(queries), Var::constant(keys), state,
                          AttentionMasks{query_mask, key_mask});
  return {out.attended.value(), out.weights.value(), out.raw.value()};
}

}  // namespace

AttentionResult attend(const Tensor& words, const Tensor& regions,
                       std::span<const AttentionFactors> factors, const Tensor* region_mask,
                       const Tensor* word_mask) {
  return run_single(words, regions, factors, region_mask, word_mask);
}

AttentionResult attend(const Tensor& words, const Tensor& regions, const AttentionFactors& shared) {
  std::vector<AttentionFactors> per_query(words.rows(), shared);
  return run_single(words, regions, per_query, nullptr, nullptr);
}

AttentionResult attend_i2t(const Tensor& regions, const Tensor& words,
                           std::span<const AttentionFactors> factors, const Tensor* word_mask) {
  return run_single(regions, words, factors, word_mask, nullptr);
}

AttentionResult attend_i2t(const Tensor& regions, const Tensor& words,
                           const AttentionFactors& shared) {
  std::vector<AttentionFactors> per_query(regions.rows(), shared);
  return run_single(regions, words, per_query, nullptr, nullptr);
}

}  // namespace regmatch
