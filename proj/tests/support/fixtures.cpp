#include "fixtures.hpp"

namespace fixture {

using namespace regmatch;

PairFeatures PairBatch::features(Direction direction) const {
  Tensor mask(Shape{size(), words[0].size(), 1});
  for (std::size_t p = 0; p < size(); ++p)
    for (std::size_t j = 0; j < lengths[p]; ++j) mask(p, j, 0) = 1.0;
  return PairFeatures::make(ag::Var::constant(oracle::stack(regions)),
                            ag::Var::constant(oracle::stack(words)), mask, direction);
}

Mat PairBatch::valid_words(std::size_t p) const {
  return Mat(words[p].begin(), words[p].begin() + static_cast<std::ptrdiff_t>(lengths[p]));
}

PairBatch PairBatch::single(std::size_t p) const {
  return {{valid_words(p)}, {regions[p]}, {lengths[p]}};
}

PairBatch random_pairs(std::mt19937_64& rng, std::size_t pairs, std::size_t regions,
                       std::size_t words, std::size_t dim, bool ragged) {
  PairBatch b;
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t len = ragged ? 1 + rng() % words : words;
    Mat w = oracle::random_mat(rng, words, dim);
    for (std::size_t j = len; j < words; ++j) std::fill(w[j].begin(), w[j].end(), 0.0);
    b.words.push_back(std::move(w));
    b.regions.push_back(oracle::random_mat(rng, regions, dim));
    b.lengths.push_back(len);
  }
  // Keep the longest row fully valid so the padded width is used.
  if (ragged && pairs > 0) b.lengths[0] = words;
  if (ragged && pairs > 0) b.words[0] = oracle::random_mat(rng, words, dim);
  return b;
}

PipelineConfig small_config(Mode mode, std::size_t steps, std::size_t dim, std::size_t align_dim) {
  PipelineConfig c = PipelineConfig::make(mode, Direction::kT2I, steps);
  c.dim = dim;
  c.align_dim = align_dim;
  c.e_hidden = 5;
  c.lambda_hidden = 3;
  c.embed_dim = 4;
  return c;
}

Pipeline::Pipeline(const PipelineConfig& c, std::uint64_t seed) : config(c) {
  std::mt19937_64 rng(seed);
  regulators = RegulatorParams::create(params, "reg", config, rng);
}

std::vector<double> Pipeline::scores(const PairBatch& pairs, Direction direction) const {
  PipelineConfig c = config;
  c.direction = direction;
  ag::NoGradGuard no_grad;
  const auto out = regmatch::score(pairs.features(direction), c, regulators, builtin_attention()).value();
  return {out.values().begin(), out.values().end()};
}

double Pipeline::score(const PairBatch& pairs, std::size_t p, Direction direction) const {
  return scores(pairs.single(p), direction)[0];
}

}  // namespace fixture
