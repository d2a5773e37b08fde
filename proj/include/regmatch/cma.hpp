#pragma once

#include <span>
#include <vector>

#include "regmatch/autograd.hpp"

namespace regmatch {

// Per-query attention factors: channel weights e in [-1, 1]^d and softmax
// temperature lambda >= 0.
struct AttentionFactors {
  std::vector<double> e;
  double lambda = 10.0;

  static constexpr double kDefaultLambda = 10.0;
  static AttentionFactors initial(std::size_t dim, double lambda = kDefaultLambda);
  void validate() const;  // throws DomainError
};

// Batched factors for P pairs x Q queries. `e` is [P x Q x d] or a broadcast
// [1 x 1 x d]; undefined means all ones. `lambda` is [P x Q x 1] or [1 x 1 x 1].
struct FactorState {
  ag::Var e;
  ag::Var lambda;

  static FactorState initial(double lambda);
  static FactorState from(std::span<const AttentionFactors> per_query);
};

// Query masks are [P x Q x 1], key masks [P x K x 1]; null means all valid.
struct AttentionMasks {
  const Tensor* queries = nullptr;
  const Tensor* keys = nullptr;
};

struct AttentionOutput {
  ag::Var attended;  // [P x Q x d]
  ag::Var weights;   // [P x K x Q], each valid column sums to 1 over keys
  ag::Var raw;       // [P x K x Q] weighted cosines c
  ag::Var clamped;   // [P x K x Q] clamp-normalized c-bar
};

// Floor on the per-key norm of the clamped cosines. A key with no positive
// cosine gets c-bar = 0 and hence uniform attention from every query.
inline constexpr double kClampNormFloor = 1e-8;

// c = v^T (e . t) / (|v| |t|). Zero-norm input is a domain error.
double weighted_cosine(std::span<const double> v, std::span<const double> t,
                       std::span<const double> e);
double cosine(std::span<const double> v, std::span<const double> t);

// Each query attends over the keys: cosines are clamped at zero, L2
// normalized per key across queries, scaled by the query's temperature and
// soft-maxed over keys; the attended feature is the weighted key sum.
AttentionOutput attend(const ag::Var& queries, const ag::Var& keys, const FactorState& factors,
                       const AttentionMasks& masks = {});

// Single-instance results as plain tensors.
struct AttentionResult {
  Tensor attended;  // [Q x d]
  Tensor weights;   // [K x Q]
  Tensor raw_sims;  // [K x Q]
};

// Text-to-image: words [L x d] attend regions [K x d]; weights are [K x L].
AttentionResult attend(const Tensor& words, const Tensor& regions,
                       std::span<const AttentionFactors> factors,
                       const Tensor* region_mask = nullptr, const Tensor* word_mask = nullptr);
AttentionResult attend(const Tensor& words, const Tensor& regions, const AttentionFactors& shared);

// Image-to-text: regions attend words; weights are [L x K], normalization of
// c-bar runs over regions and the softmax over words.
AttentionResult attend_i2t(const Tensor& regions, const Tensor& words,
                           std::span<const AttentionFactors> factors,
                           const Tensor* word_mask = nullptr);
AttentionResult attend_i2t(const Tensor& regions, const Tensor& words,
                           const AttentionFactors& shared);

}  // namespace regmatch
