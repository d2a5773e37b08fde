#include "regmatch/encoders.hpp"

#include <algorithm>

#include "regmatch/errors.hpp"

namespace regmatch {

using ag::Var;

ImageProjector ImageProjector::create(ParameterSet& params, const std::string& prefix,
                                      std::size_t raw_dim, std::size_t dim, std::mt19937_64& rng) {
  return {Linear::create(params, prefix + ".projection", raw_dim, dim, rng)};
}

ImageProjector ImageProjector::bind(ParameterSet& params, const std::string& prefix) {
  return {Linear::bind(params, prefix + ".projection")};
}

Var ImageProjector::operator()(const Var& regions) const {
  if (regions.shape().cols != raw_dim()) {
    throw ConfigError("region features have d_raw = " + std::to_string(regions.shape().cols) +
                      " but the projector expects " + std::to_string(raw_dim()));
  }
  return projection(regions);
}

Tensor encode_image(const RegionSet& regions, const ImageProjector& projector) {
  ag::NoGradGuard no_grad;
  return projector(Var::constant(regions.features)).value();
}

TokenBatch TokenBatch::from(std::span<const SentenceSet* const> sentences) {
  TokenBatch batch;
  for (const auto* s : sentences) {
    if (s->token_ids.empty()) throw DataError("sentence " + s->caption_id + " is empty");
    batch.max_length = std::max(batch.max_length, s->token_ids.size());
  }
  batch.mask = Tensor(Shape{sentences.size(), batch.max_length, 1});
  batch.ids.assign(sentences.size() * batch.max_length, Vocabulary::kEnd);
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& ids = sentences[b]->token_ids;
    batch.lengths.push_back(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) {
      batch.ids[b * batch.max_length + t] = ids[t];
      batch.mask(b, t, 0) = 1.0;
    }
  }
  return batch;
}

TokenBatch TokenBatch::from(std::span<const SentenceSet> sentences) {
  std::vector<const SentenceSet*> ptrs;
  ptrs.reserve(sentences.size());
  for (const auto& s : sentences) ptrs.push_back(&s);
  return from(std::span<const SentenceSet* const>(ptrs));
}

GruDirection GruDirection::create(ParameterSet& params, const std::string& prefix, std::size_t in,
                                  std::size_t hidden_size, std::mt19937_64& rng) {
  GruDirection g;
  g.input = Linear::create(params, prefix + ".input", in, 3 * hidden_size, rng);
  // Recurrent weights use the hidden fan-in like the input side.
  g.hidden = Linear::create(params, prefix + ".hidden", hidden_size, 3 * hidden_size, rng);
  return g;
}

GruDirection GruDirection::bind(ParameterSet& params, const std::string& prefix) {
  return {Linear::bind(params, prefix + ".input"), Linear::bind(params, prefix + ".hidden")};
}

TextEncoder TextEncoder::create(ParameterSet& params, const std::string& prefix,
                                std::size_t vocab_size, std::size_t embed_dim, std::size_t dim,
                                std::mt19937_64& rng) {
  TextEncoder enc;
  std::normal_distribution<double> gauss(0.0, 0.1);
  Tensor table = Tensor::matrix(vocab_size, embed_dim);
  for (double& v : table.values()) v = gauss(rng);
  enc.embedding = params.add(prefix + ".embedding", std::move(table));
  enc.forward = GruDirection::create(params, prefix + ".gru_forward", embed_dim, dim, rng);
  enc.backward = GruDirection::create(params, prefix + ".gru_backward", embed_dim, dim, rng);
  return enc;
}

TextEncoder TextEncoder::bind(ParameterSet& params, const std::string& prefix) {
  TextEncoder enc;
  enc.embedding = params.get(prefix + ".embedding");
  enc.forward = GruDirection::bind(params, prefix + ".gru_forward");
  enc.backward = GruDirection::bind(params, prefix + ".gru_backward");
  return enc;
}

namespace {

// Runs one direction over all positions. Padded steps keep the previous
// state, so the backward pass starts at each sentence's last real token.
std::vector<Var> run_direction(const GruDirection& gru, const Var& inputs, const Tensor& mask,
                               bool reverse) {
  const std::size_t batch = inputs.shape().batch;
  const std::size_t steps = inputs.shape().rows;
  const std::size_t h = gru.hidden.in_features();
  const Var gates_x = gru.input(inputs);  // [B x L x 3h]
  Var state = Var::constant(Tensor(Shape{batch, 1, h}));
  std::vector<Var> states(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    const Var gx = ag::slice(gates_x, 1, t, 1);
    const Var gh = gru.hidden(state);
    const Var reset = ag::sigmoid(ag::slice(gx, 2, 0, h) + ag::slice(gh, 2, 0, h));
    const Var update = ag::sigmoid(ag::slice(gx, 2, h, h) + ag::slice(gh, 2, h, h));
    const Var candidate = ag::tanh(ag::slice(gx, 2, 2 * h, h) + reset * ag::slice(gh, 2, 2 * h, h));
    // h' = (1 - z) * n + z * h
    Var next = candidate + update * (state - candidate);
    Tensor step_mask(Shape{batch, 1, 1});
    bool all_valid = true;
    for (std::size_t b = 0; b < batch; ++b) {
      step_mask(b, 0, 0) = mask(b, t, 0);
      all_valid = all_valid && step_mask(b, 0, 0) != 0.0;
    }
    if (!all_valid) {
      Tensor keep = step_mask;
      for (double& v : keep.values()) v = 1.0 - v;
      next = next * Var::constant(step_mask) + state * Var::constant(keep);
    }
    state = next;
    states[t] = state;
  }
  return states;
}

}  // namespace

TextEncoding TextEncoder::operator()(const TokenBatch& batch) const {
  const Var embedded = ag::embedding(embedding, batch.ids, batch.size(), batch.max_length);
  const auto fwd = run_direction(forward, embedded, batch.mask, false);
  const auto bwd = run_direction(backward, embedded, batch.mask, true);
  TextEncoding out;
  out.forward_states = ag::concat(fwd, 1);
  out.backward_states = ag::concat(bwd, 1);
  out.mask = batch.mask;
  Var mean = ag::scale(out.forward_states + out.backward_states, 0.5);
  bool padded = false;
  for (std::size_t len : batch.lengths) padded = padded || len != batch.max_length;
  out.features = padded ? mean * Var::constant(batch.mask) : mean;
  return out;
}

Tensor encode_text(const SentenceSet& sentence, const TextEncoder& encoder) {
  for (std::size_t id : sentence.token_ids) {
    if (id >= encoder.vocab_size()) {
      throw DataError("token id " + std::to_string(id) + " in " + sentence.caption_id +
                      " outside vocabulary of " + std::to_string(encoder.vocab_size()));
    }
  }
  ag::NoGradGuard no_grad;
  const SentenceSet* one[] = {&sentence};
  return encoder(TokenBatch::from(std::span<const SentenceSet* const>(one))).features.value();
}

}  // namespace regmatch
