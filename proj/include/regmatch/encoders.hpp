#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "regmatch/datamodel.hpp"
#include "regmatch/params.hpp"

namespace regmatch {

// Linear map of raw region features (d_raw) into the joint space (d).
struct ImageProjector {
  Linear projection;

  static ImageProjector create(ParameterSet& params, const std::string& prefix,
                               std::size_t raw_dim, std::size_t dim, std::mt19937_64& rng);
  static ImageProjector bind(ParameterSet& params, const std::string& prefix);

  std::size_t raw_dim() const { return projection.in_features(); }
  std::size_t dim() const { return projection.out_features(); }

  // [B x K x d_raw] -> [B x K x d]
  ag::Var operator()(const ag::Var& regions) const;
};

Tensor encode_image(const RegionSet& regions, const ImageProjector& projector);

// Padded token ids of a batch of sentences.
struct TokenBatch {
  std::vector<std::size_t> ids;  // [batch x max_length], padding uses <end>
  std::vector<std::size_t> lengths;
  std::size_t max_length = 0;
  Tensor mask;  // [batch x max_length x 1], 1 on real tokens

  static TokenBatch from(std::span<const SentenceSet* const> sentences);
  static TokenBatch from(std::span<const SentenceSet> sentences);
  std::size_t size() const { return lengths.size(); }
};

// Reset/update-gate recurrent cell, one direction.
struct GruDirection {
  Linear input;   // E -> 3h, gate order (reset, update, candidate)
  Linear hidden;  // h -> 3h

  static GruDirection create(ParameterSet& params, const std::string& prefix, std::size_t in,
                             std::size_t hidden_size, std::mt19937_64& rng);
  static GruDirection bind(ParameterSet& params, const std::string& prefix);
};

struct TextEncoding {
  ag::Var features;        // [B x L x d], mean of both directions, zero on padding
  ag::Var forward_states;  // [B x L x d]
  ag::Var backward_states;
  Tensor mask;             // [B x L x 1]
};

// Word embedding followed by a bidirectional GRU whose two hidden states are
// averaged per position.
struct TextEncoder {
  ag::Var embedding;  // [1 x vocab x embed_dim]
  GruDirection forward;
  GruDirection backward;

  static constexpr std::size_t kDefaultEmbedDim = 300;

  static TextEncoder create(ParameterSet& params, const std::string& prefix,
                            std::size_t vocab_size, std::size_t embed_dim, std::size_t dim,
                            std::mt19937_64& rng);
  static TextEncoder bind(ParameterSet& params, const std::string& prefix);

  std::size_t vocab_size() const { return embedding.shape().rows; }
  std::size_t dim() const { return forward.hidden.in_features(); }

  TextEncoding operator()(const TokenBatch& batch) const;
};

Tensor encode_text(const SentenceSet& sentence, const TextEncoder& encoder);

}  // namespace regmatch
