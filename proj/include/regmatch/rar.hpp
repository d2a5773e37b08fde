#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "regmatch/params.hpp"

namespace regmatch {

// Guidance projection W_g, local projection W_l (both m x m), scorer W_beta
// (1 x m) and similarity head W_s (1 x m). None carry a bias.
struct RarParams {
  Linear guide;
  Linear local;
  Linear scorer;
  Linear head;

  static RarParams create(ParameterSet& params, const std::string& prefix, std::size_t align_dim,
                          std::mt19937_64& rng);
  static RarParams bind(ParameterSet& params, const std::string& prefix);
};

struct GuidanceState {
  ag::Var guidance;  // [P x 1 x m]
  ag::Var beta;      // [P x Q x 1], sums to 1 over valid queries
  std::size_t step = 0;
};

// Uniform aggregation weights over valid alignments and their weighted sum.
// `mask` is [P x Q x 1] or null.
GuidanceState init_guidance(const ag::Var& alignments, const Tensor* mask = nullptr);

// u_j = tanh(W_g a_g) . tanh(W_l a_j); beta = softmax_j(W_beta u_j);
// a_g' = sum_j beta_j a_j (+ a_g when `residual`).
GuidanceState step_guidance(const GuidanceState& state, const ag::Var& alignments,
                            const RarParams& params, const Tensor* mask = nullptr,
                            bool residual = false);

// sigmoid(W_s a_g), [P x 1 x 1].
ag::Var similarity_head(const ag::Var& guidance, const RarParams& params);

// ---- single-instance API ----

struct Guidance {
  std::vector<double> guidance;
  std::vector<double> beta;
  std::size_t step = 0;
};

Guidance init_guidance(const Tensor& alignments);  // [L x m]
Guidance step_guidance(const Guidance& state, const Tensor& alignments, const RarParams& params);
double similarity_head(std::span<const double> guidance, const RarParams& params);

}  // namespace regmatch
