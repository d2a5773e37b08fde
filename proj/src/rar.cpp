#include "regmatch/rar.hpp"

#include "regmatch/errors.hpp"

namespace regmatch {

using ag::Var;

RarParams RarParams::create(ParameterSet& params, const std::string& prefix, std::size_t align_dim,
                            std::mt19937_64& rng) {
  RarParams p;
  p.guide = Linear::create(params, prefix + ".guide", align_dim, align_dim, rng, false);
  p.local = Linear::create(params, prefix + ".local", align_dim, align_dim, rng, false);
  p.scorer = Linear::create(params, prefix + ".scorer", align_dim, 1, rng, false);
  p.head = Linear::create(params, prefix + ".head", align_dim, 1, rng, false);
  return p;
}

RarParams RarParams::bind(ParameterSet& params, const std::string& prefix) {
  return {Linear::bind(params, prefix + ".guide"), Linear::bind(params, prefix + ".local"),
          Linear::bind(params, prefix + ".scorer"), Linear::bind(params, prefix + ".head")};
}

GuidanceState init_guidance(const Var& alignments, const Tensor* mask) {
  const Shape& s = alignments.shape();
  if (s.rows == 0) throw DomainError("no alignments to aggregate");
  Tensor beta(Shape{s.batch, s.rows, 1});
  for (std::size_t p = 0; p < s.batch; ++p) {
    std::size_t valid = 0;
    for (std::size_t j = 0; j < s.rows; ++j) valid += (!mask || (*mask)(p, j, 0) != 0.0) ? 1 : 0;
    if (valid == 0) throw DomainError("no valid alignments to aggregate");
    // Same arithmetic as a softmax over equal scores.
    for (std::size_t j = 0; j < s.rows; ++j) {
      beta(p, j, 0) = (!mask || (*mask)(p, j, 0) != 0.0) ? 1.0 / static_cast<double>(valid) : 0.0;
    }
  }
  GuidanceState state;
  state.beta = Var::constant(std::move(beta));
  state.guidance = ag::matmul(state.beta, alignments, true, false);
  return state;
}

GuidanceState step_guidance(const GuidanceState& state, const Var& alignments,
                            const RarParams& params, const Tensor* mask, bool residual) {
  const Var guide = ag::tanh(params.guide(state.guidance));  // [P x 1 x m]
  const Var local = ag::tanh(params.local(alignments));      // [P x Q x m]
  const Var scores = params.scorer(guide * local);           // [P x Q x 1]
  GuidanceState next;
  next.beta = ag::softmax(scores, 1, mask);
  next.guidance = ag::matmul(next.beta, alignments, true, false);
  if (residual) next.guidance = next.guidance + state.guidance;
  next.step = state.step + 1;
  return next;
}

Var similarity_head(const Var& guidance, const RarParams& params) {
  return ag::sigmoid(params.head(guidance));
}

namespace {

Guidance to_plain(const GuidanceState& s) {
  Guidance g;
  g.guidance.assign(s.guidance.value().values().begin(), s.guidance.value().values().end());
  g.beta.assign(s.beta.value().values().begin(), s.beta.value().values().end());
  g.step = s.step;
  return g;
}

}  // namespace

Guidance init_guidance(const Tensor& alignments) {
  if (alignments.rows() == 0) throw DomainError("empty alignment set");
  ag::NoGradGuard no_grad;
  return to_plain(init_guidance(Var::constant(alignments)));
}

Guidance step_guidance(const Guidance& state, const Tensor& alignments, const RarParams& params) {
  if (state.beta.size() != alignments.rows() || state.guidance.size() != alignments.cols()) {
    throw ShapeError("guidance state does not match the alignment set");
  }
  ag::NoGradGuard no_grad;
  GuidanceState s;
  s.guidance = Var::constant(Tensor::row(state.guidance));
  s.beta = Var::constant(Tensor(Shape{1, state.beta.size(), 1}, state.beta));
  s.step = state.step;
  return to_plain(step_guidance(s, Var::constant(alignments), params));
}

double similarity_head(std::span<const double> guidance, const RarParams& params) {
  ag::NoGradGuard no_grad;
  return similarity_head(Var::constant(Tensor::row(guidance)), params).value().item();
}

}  // namespace regmatch
