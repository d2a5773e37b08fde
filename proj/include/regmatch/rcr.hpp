#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "regmatch/cma.hpp"
#include "regmatch/params.hpp"

namespace regmatch {

enum class FactorSource {
  kAlignment,  // MLPs read the alignment vector (default)
  kQuery,      // MLPs read the raw query feature (ablation)
};

struct RcrConfig {
  std::size_t dim = 1024;          // d
  std::size_t align_dim = 256;     // m
  std::size_t e_hidden = 512;
  std::size_t lambda_hidden = 128;
  bool residual = true;
  FactorSource source = FactorSource::kAlignment;
};

// Alignment projection W_a [m x d], no bias.
struct AlignmentEncoder {
  Linear projection;

  static AlignmentEncoder create(ParameterSet& params, const std::string& prefix,
                                 std::size_t dim, std::size_t align_dim, std::mt19937_64& rng);
  static AlignmentEncoder bind(ParameterSet& params, const std::string& prefix);
};

// The two factor MLPs:
//   e-branch  FC(in -> e_hidden) tanh FC(e_hidden -> d) tanh
//   lambda    FC(in -> lambda_hidden) tanh FC(lambda_hidden -> 1)
struct RcrParams {
  Linear e_in, e_out;
  Linear lambda_in, lambda_out;

  static RcrParams create(ParameterSet& params, const std::string& prefix, const RcrConfig& config,
                          std::mt19937_64& rng);
  static RcrParams bind(ParameterSet& params, const std::string& prefix);
  void zero();  // every weight and bias set to 0
};

// a = W_a |q - v|^2 / ||W_a |q - v|^2||, rows of [P x Q x d] -> [P x Q x m].
// A row whose projection is exactly zero stays zero.
ag::Var build_alignment(const ag::Var& queries, const ag::Var& attended,
                        const AlignmentEncoder& encoder);

// e' = clip(MLP_e(a) + e, -1, 1), lambda' = [MLP_l(a) + lambda]_+; the
// previous factors are dropped when `residual` is false. `input` is the
// alignment (or the query, for FactorSource::kQuery), [P x Q x in].
FactorState regulate(const ag::Var& input, const FactorState& previous, const RcrParams& params,
                     bool residual);

// ---- single-instance API ----

struct AlignmentVector {
  std::vector<double> values;
  bool degenerate = false;  // pre-normalization vector was exactly zero
};

AlignmentVector build_alignment(std::span<const double> query, std::span<const double> attended,
                                const Tensor& projection);

AttentionFactors regulate(std::span<const double> alignment, const AttentionFactors& previous,
                          const RcrParams& params, bool residual);

// Factors are (re)computed from each query and its previously attended
// feature, then attention is rerun under them.
struct Refinement {
  AttentionOutput attention;
  FactorState factors;
  ag::Var alignment;  // the alignment the factors were computed from
};

Refinement refine_attention(const ag::Var& queries, const ag::Var& keys,
                            const ag::Var& previous_attended, const FactorState& previous,
                            const AlignmentEncoder& encoder, const RcrParams& params,
                            const RcrConfig& config, const AttentionMasks& masks = {});

}  // namespace regmatch
