#include "regmatch/rcr.hpp"

#include <cmath>

#include "regmatch/errors.hpp"

namespace regmatch {

using ag::Var;

AlignmentEncoder AlignmentEncoder::create(ParameterSet& params, const std::string& prefix,
                                          std::size_t dim, std::size_t align_dim,
                                          std::mt19937_64& rng) {
  return {Linear::create(params, prefix, dim, align_dim, rng, /*with_bias=*/false)};
}

AlignmentEncoder AlignmentEncoder::bind(ParameterSet& params, const std::string& prefix) {
  return {Linear::bind(params, prefix)};
}

RcrParams RcrParams::create(ParameterSet& params, const std::string& prefix,
                            const RcrConfig& config, std::mt19937_64& rng) {
  const std::size_t in =
      config.source == FactorSource::kAlignment ? config.align_dim : config.dim;
  RcrParams p;
  p.e_in = Linear::create(params, prefix + ".e_in", in, config.e_hidden, rng);
  p.e_out = Linear::create(params, prefix + ".e_out", config.e_hidden, config.dim, rng);
  p.lambda_in = Linear::create(params, prefix + ".lambda_in", in, config.lambda_hidden, rng);
  p.lambda_out = Linear::create(params, prefix + ".lambda_out", config.lambda_hidden, 1, rng);
  return p;
}

RcrParams RcrParams::bind(ParameterSet& params, const std::string& prefix) {
  return {Linear::bind(params, prefix + ".e_in"), Linear::bind(params, prefix + ".e_out"),
          Linear::bind(params, prefix + ".lambda_in"), Linear::bind(params, prefix + ".lambda_out")};
}

void RcrParams::zero() {
  for (Linear* l : {&e_in, &e_out, &lambda_in, &lambda_out}) {
    l->weight.mutable_value().fill(0.0);
    if (l->bias.defined()) l->bias.mutable_value().fill(0.0);
  }
}

Var build_alignment(const Var& queries, const Var& attended, const AlignmentEncoder& encoder) {
  const Var squared = ag::square(queries - attended);
  return ag::l2_normalize(encoder.projection(squared), 2, 0.0);
}

FactorState regulate(const Var& input, const FactorState& previous, const RcrParams& params,
                     bool residual) {
  const std::size_t dim = params.e_out.out_features();
  Var e_offset = ag::tanh(params.e_out(ag::tanh(params.e_in(input))));
  Var lambda_offset = params.lambda_out(ag::tanh(params.lambda_in(input)));
  FactorState next;
  if (residual) {
    const Var prev_e =
        previous.e.defined() ? previous.e : Var::constant(Tensor(Shape{1, 1, dim}, 1.0));
    e_offset = e_offset + prev_e;
    lambda_offset = lambda_offset + previous.lambda;
  }
  next.e = ag::clamp(e_offset, -1.0, 1.0);
  next.lambda = ag::relu(lambda_offset);
  return next;
}

AlignmentVector build_alignment(std::span<const double> query, std::span<const double> attended,
                                const Tensor& projection) {
  if (query.size() != attended.size() || projection.cols() != query.size()) {
    throw ShapeError("build_alignment dimension mismatch");
  }
  ag::NoGradGuard no_grad;
  AlignmentEncoder enc{Linear{Var::constant(projection), Var()}};
  const Var a = build_alignment(Var::constant(Tensor::row(query)),
                                Var::constant(Tensor::row(attended)), enc);
  AlignmentVector out;
  out.values.assign(a.value().values().begin(), a.value().values().end());
  out.degenerate = true;
  for (double v : out.values) out.degenerate = out.degenerate && v == 0.0;
  return out;
}

AttentionFactors regulate(std::span<const double> alignment, const AttentionFactors& previous,
                          const RcrParams& params, bool residual) {
  previous.validate();
  if (previous.e.size() != params.e_out.out_features()) {
    throw ShapeError("previous channel weights do not match the regulator output dim");
  }
  ag::NoGradGuard no_grad;
  const FactorState prev = FactorState::from(std::span<const AttentionFactors>(&previous, 1));
  const FactorState next =
      regulate(Var::constant(Tensor::row(alignment)), prev, params, residual);
  AttentionFactors out;
  out.e.assign(next.e.value().values().begin(), next.e.value().values().end());
  out.lambda = next.lambda.value().item();
  return out;
}

Refinement refine_attention(const Var& queries, const Var& keys, const Var& previous_attended,
                            const FactorState& previous, const AlignmentEncoder& encoder,
                            const RcrParams& params, const RcrConfig& config,
                            const AttentionMasks& masks) {
  Refinement out;
  out.alignment = build_alignment(queries, previous_attended, encoder);
  const Var& input = config.source == FactorSource::kAlignment ? out.alignment : queries;
  out.factors = regulate(input, previous, params, config.residual);
  out.attention = attend(queries, keys, out.factors, masks);
  return out;
}

}  // namespace regmatch
