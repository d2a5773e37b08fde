#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "regmatch/cma.hpp"
#include "regmatch/config.hpp"
#include "regmatch/datamodel.hpp"
#include "regmatch/encoders.hpp"
#include "regmatch/rar.hpp"
#include "regmatch/rcr.hpp"

namespace regmatch {

enum class Mode { kBaseline, kRcr, kRar, kRcar };
enum class Direction { kT2I, kI2T };
enum class ScoreHead { kSigmoid, kMeanCosine };

const char* to_string(Mode mode);
const char* to_string(Direction direction);
Mode parse_mode(const std::string& text);
Direction parse_direction(const std::string& text);

struct PipelineConfig {
  Mode mode = Mode::kRcar;
  Direction direction = Direction::kT2I;
  std::size_t n_rar = 2;
  std::size_t n_rcr = 1;
  double lambda0 = AttentionFactors::kDefaultLambda;
  bool residual_rcr = true;
  bool residual_rar = false;
  // Run the correspondence regulator on every iteration instead of the
  // first n_rcr only.
  bool rcr_every_step = false;
  bool share_alignment = true;
  bool per_step_rcr = false;
  bool learn_initial_factors = false;
  FactorSource factor_source = FactorSource::kAlignment;
  ScoreHead rcar_head = ScoreHead::kSigmoid;

  std::size_t dim = 1024;
  std::size_t align_dim = 256;
  std::size_t e_hidden = 512;
  std::size_t lambda_hidden = 128;
  std::size_t embed_dim = TextEncoder::kDefaultEmbedDim;

  // Step counts follow the mode: rcar N -> (n_rar = N, n_rcr = N - 1),
  // rcr N -> n_rcr = N, rar N -> n_rar = N, baseline -> none.
  static PipelineConfig make(Mode mode, Direction direction, std::size_t steps);

  void validate() const;
  RcrConfig rcr() const;
  ConfigMap to_map() const;
  static PipelineConfig from_map(const ConfigMap& map);
};

struct RegulatorParams {
  AlignmentEncoder alignment;      // feeds the correspondence regulator
  AlignmentEncoder rar_alignment;  // same parameters unless un-shared
  std::vector<RcrParams> rcr;      // one set, or one per step
  RarParams rar;
  ag::Var initial_e;               // learnable initial factors, if enabled
  ag::Var initial_lambda;

  static RegulatorParams create(ParameterSet& params, const std::string& prefix,
                                const PipelineConfig& config, std::mt19937_64& rng);
  static RegulatorParams bind(ParameterSet& params, const std::string& prefix,
                              const PipelineConfig& config);
  const RcrParams& rcr_at(std::size_t step) const;
  FactorState initial_factors(const PipelineConfig& config) const;
};

// Batched query/key features of P image-text pairs with their masks.
struct PairFeatures {
  ag::Var queries;   // [P x Q x d]
  ag::Var keys;      // [P x K x d]
  Tensor query_mask; // [P x Q x 1] or empty
  Tensor key_mask;   // [P x K x 1] or empty

  AttentionMasks masks() const;
  // Words attend regions for t2i; regions attend words for i2t.
  static PairFeatures make(const ag::Var& regions, const ag::Var& words, const Tensor& word_mask,
                           Direction direction);
};

// Replaces the cross-modal attention unit: maps queries, keys and per-query
// factors to attended features [P x Q x d]. Must honor the supplied factors
// for the correspondence regulator to have an effect.
using InteractionAdapter = std::function<ag::Var(const ag::Var& queries, const ag::Var& keys,
                                                 const FactorState& factors,
                                                 const AttentionMasks& masks)>;
InteractionAdapter builtin_attention();

// Per-step values recorded during scoring, for diagnostics.
struct PipelineTrace {
  std::vector<Tensor> query_cosines;  // after each attention pass, [P x Q x 1]
  std::vector<Tensor> lambdas;        // factors used by each pass
  std::vector<Tensor> betas;          // aggregation weights after init and each step
};

// All scorers return [P x 1 x 1].
ag::Var score_baseline(const PairFeatures& pairs, const PipelineConfig& config,
                       PipelineTrace* trace = nullptr);
ag::Var score_rcr(const PairFeatures& pairs, const PipelineConfig& config,
                  const RegulatorParams& params, const InteractionAdapter& adapter,
                  PipelineTrace* trace = nullptr);
ag::Var score_rar(const PairFeatures& pairs, const PipelineConfig& config,
                  const RegulatorParams& params, const InteractionAdapter& adapter,
                  PipelineTrace* trace = nullptr);
ag::Var score_rcar(const PairFeatures& pairs, const PipelineConfig& config,
                   const RegulatorParams& params, const InteractionAdapter& adapter,
                   PipelineTrace* trace = nullptr);
ag::Var score(const PairFeatures& pairs, const PipelineConfig& config,
              const RegulatorParams& params, const InteractionAdapter& adapter,
              PipelineTrace* trace = nullptr);

// Mean over valid queries of cos(query, attended), [P x 1 x 1].
ag::Var mean_cosine(const ag::Var& queries, const ag::Var& attended, const Tensor* query_mask);

class Scorer {
 public:
  Scorer(InteractionAdapter adapter, PipelineConfig config, RegulatorParams params);
  ag::Var operator()(const PairFeatures& pairs, PipelineTrace* trace = nullptr) const;
  const PipelineConfig& config() const { return config_; }

 private:
  InteractionAdapter adapter_;
  PipelineConfig config_;
  RegulatorParams params_;
};

Scorer host_foreign_unit(InteractionAdapter adapter, const PipelineConfig& config,
                         const RegulatorParams& params);

// Encoders plus regulators for one attention direction.
class MatchingModel {
 public:
  static MatchingModel create(const PipelineConfig& config, std::size_t vocab_size,
                              std::size_t raw_dim, std::uint64_t seed);
  // Rebinds every module to the given parameter set (names must match).
  static MatchingModel from_params(const PipelineConfig& config, ParameterSet params);

  const PipelineConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const ImageProjector& image_encoder() const { return image_; }
  const TextEncoder& text_encoder() const { return text_; }
  const RegulatorParams& regulators() const { return regulators_; }
  std::size_t vocab_size() const { return text_.vocab_size(); }
  std::size_t raw_dim() const { return image_.raw_dim(); }

  ag::Var encode_images(std::span<const RegionSet* const> regions) const;  // [B x K x d]
  TextEncoding encode_texts(std::span<const SentenceSet* const> sentences) const;

  // Scores pairs (image_index[p], caption_index[p]) of already encoded batches.
  ag::Var score_pairs(const ag::Var& images, const TextEncoding& texts,
                      std::span<const std::size_t> image_index,
                      std::span<const std::size_t> caption_index,
                      PipelineTrace* trace = nullptr) const;
  // Every image against every caption: [1 x images x captions].
  ag::Var similarity_matrix(const ag::Var& images, const TextEncoding& texts) const;

  // Full [images x captions] score matrix without gradients, in caption blocks.
  Tensor score_dataset(const Dataset& data, std::size_t block = 64) const;

  MatchingModel clone() const;

 private:
  PipelineConfig config_;
  ParameterSet params_;
  ImageProjector image_;
  TextEncoder text_;
  RegulatorParams regulators_;
};

// ---- similarity records ----

struct SimilarityRecord {
  std::string image_id;
  std::string caption_id;
  std::string direction;  // t2i, i2t or ensemble
  std::string mode;
  double score = 0.0;
};

// Per-pair arithmetic mean; both sets must cover the same pairs.
std::vector<SimilarityRecord> ensemble(std::span<const SimilarityRecord> a,
                                       std::span<const SimilarityRecord> b);

// Score decimal formatting: 9 significant digits.
std::string format_score(double score);
void write_scores(const std::filesystem::path& path, std::span<const SimilarityRecord> records);
std::vector<SimilarityRecord> read_scores(const std::filesystem::path& path);

std::vector<SimilarityRecord> score_records(const Dataset& data, const Tensor& matrix,
                                            const PipelineConfig& config);

}  // namespace regmatch
