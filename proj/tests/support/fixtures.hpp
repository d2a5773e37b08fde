#pragma once

// Random pair batches and small pipelines shared by the pipeline and
// acceptance tests.

#include <random>
#include <vector>

#include "oracles.hpp"
#include "regmatch/pipeline.hpp"

namespace fixture {

using oracle::Mat;

struct PairBatch {
  std::vector<Mat> words;    // [L_max x d] each, zero rows past the length
  std::vector<Mat> regions;  // [K x d] each
  std::vector<std::size_t> lengths;

  std::size_t size() const { return words.size(); }
  regmatch::PairFeatures features(regmatch::Direction direction) const;
  // Just pair p, unpadded.
  PairBatch single(std::size_t p) const;
  Mat valid_words(std::size_t p) const;
};

PairBatch random_pairs(std::mt19937_64& rng, std::size_t pairs, std::size_t regions,
                       std::size_t words, std::size_t dim, bool ragged);

regmatch::PipelineConfig small_config(regmatch::Mode mode, std::size_t steps, std::size_t dim,
                                      std::size_t align_dim);

struct Pipeline {
  regmatch::PipelineConfig config;
  regmatch::ParameterSet params;
  regmatch::RegulatorParams regulators;

  Pipeline(const regmatch::PipelineConfig& config, std::uint64_t seed);
  double score(const PairBatch& pairs, std::size_t p, regmatch::Direction direction) const;
  std::vector<double> scores(const PairBatch& pairs, regmatch::Direction direction) const;
};

}  // namespace fixture
