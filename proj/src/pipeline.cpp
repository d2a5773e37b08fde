#include "regmatch/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "regmatch/errors.hpp"

namespace regmatch {

using ag::Var;

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kBaseline: return "baseline";
    case Mode::kRcr: return "rcr";
    case Mode::kRar: return "rar";
    case Mode::kRcar: return "rcar";
  }
  return "?";
}

const char* to_string(Direction direction) {
  return direction == Direction::kT2I ? "t2i" : "i2t";
}

Mode parse_mode(const std::string& text) {
  if (text == "baseline") return Mode::kBaseline;
  if (text == "rcr") return Mode::kRcr;
  if (text == "rar") return Mode::kRar;
  if (text == "rcar") return Mode::kRcar;
  throw ConfigError("unknown mode '" + text + "' (baseline, rcr, rar, rcar)");
}

Direction parse_direction(const std::string& text) {
  if (text == "t2i") return Direction::kT2I;
  if (text == "i2t") return Direction::kI2T;
  throw ConfigError("unknown direction '" + text + "' (t2i, i2t)");
}

// ---- config ----

PipelineConfig PipelineConfig::make(Mode mode, Direction direction, std::size_t steps) {
  PipelineConfig c;
  c.mode = mode;
  c.direction = direction;
  switch (mode) {
    case Mode::kBaseline: c.n_rar = 0; c.n_rcr = 0; break;
    case Mode::kRcr: c.n_rar = 0; c.n_rcr = steps; break;
    case Mode::kRar: c.n_rar = steps; c.n_rcr = 0; break;
    case Mode::kRcar: c.n_rar = steps; c.n_rcr = steps > 0 ? steps - 1 : 0; break;
  }
  return c;
}

void PipelineConfig::validate() const {
  if (dim == 0 || align_dim == 0 || e_hidden == 0 || lambda_hidden == 0 || embed_dim == 0) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) throw ConfigError("lambda0 must be finite and >= 0");
  switch (mode) {
    case Mode::kBaseline:
      if (n_rar || n_rcr) throw ConfigError("baseline mode takes no regulation steps");
      break;
    case Mode::kRcr:
      if (n_rar) throw ConfigError("rcr mode takes no aggregation steps");
      break;
    case Mode::kRar:
      if (n_rcr) throw ConfigError("rar mode takes no correspondence steps");
      break;
    case Mode::kRcar:
      break;
  }
  if (rcar_head == ScoreHead::kMeanCosine && mode != Mode::kRcar) {
    throw ConfigError("the cosine head option only applies to rcar mode");
  }
}

RcrConfig PipelineConfig::rcr() const {
  return {dim, align_dim, e_hidden, lambda_hidden, residual_rcr, factor_source};
}

ConfigMap PipelineConfig::to_map() const {
  ConfigMap m;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  m.set("mode", to_string(mode));
  m.set("direction", to_string(direction));
  m.set("n_rar", std::to_string(n_rar));
  m.set("n_rcr", std::to_string(n_rcr));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", lambda0);
  m.set("lambda0", buf);
  m.set("residual_rcr", b(residual_rcr));
  m.set("residual_rar", b(residual_rar));
  m.set("rcr_every_step", b(rcr_every_step));
  m.set("share_alignment", b(share_alignment));
  m.set("per_step_rcr", b(per_step_rcr));
  m.set("learn_initial_factors", b(learn_initial_factors));
  m.set("factor_source", factor_source == FactorSource::kAlignment ? "alignment" : "query");
  m.set("rcar_head", rcar_head == ScoreHead::kSigmoid ? "sigmoid" : "mean_cosine");
  m.set("dim", std::to_string(dim));
  m.set("align_dim", std::to_string(align_dim));
  m.set("e_hidden", std::to_string(e_hidden));
  m.set("lambda_hidden", std::to_string(lambda_hidden));
  m.set("embed_dim", std::to_string(embed_dim));
  return m;
}

PipelineConfig PipelineConfig::from_map(const ConfigMap& m) {
  PipelineConfig c = make(parse_mode(m.get_string("mode", "rcar")),
                          parse_direction(m.get_string("direction", "t2i")),
                          m.get_size("steps", 2));
  c.n_rar = m.get_size("n_rar", c.n_rar);
  c.n_rcr = m.get_size("n_rcr", c.n_rcr);
  c.lambda0 = m.get_double("lambda0", c.lambda0);
  c.residual_rcr = m.get_bool("residual_rcr", c.residual_rcr);
  c.residual_rar = m.get_bool("residual_rar", c.residual_rar);
  c.rcr_every_step = m.get_bool("rcr_every_step", c.rcr_every_step);
  c.share_alignment = m.get_bool("share_alignment", c.share_alignment);
  c.per_step_rcr = m.get_bool("per_step_rcr", c.per_step_rcr);
  c.learn_initial_factors = m.get_bool("learn_initial_factors", c.learn_initial_factors);
  const std::string source = m.get_string("factor_source", "alignment");
  if (source == "alignment") c.factor_source = FactorSource::kAlignment;
  else if (source == "query") c.factor_source = FactorSource::kQuery;
  else throw ConfigError("factor_source must be alignment or query");
  const std::string head = m.get_string("rcar_head", "sigmoid");
  if (head == "sigmoid") c.rcar_head = ScoreHead::kSigmoid;
  else if (head == "mean_cosine") c.rcar_head = ScoreHead::kMeanCosine;
  else throw ConfigError("rcar_head must be sigmoid or mean_cosine");
  c.dim = m.get_size("dim", c.dim);
  c.align_dim = m.get_size("align_dim", c.align_dim);
  c.e_hidden = m.get_size("e_hidden", c.e_hidden);
  c.lambda_hidden = m.get_size("lambda_hidden", c.lambda_hidden);
  c.embed_dim = m.get_size("embed_dim", c.embed_dim);
  c.validate();
  return c;
}

// ---- regulator parameters ----

namespace {

bool uses_rcr(const PipelineConfig& c) {
  return c.mode == Mode::kRcr || c.mode == Mode::kRcar;
}
bool uses_rar(const PipelineConfig& c) {
  return c.mode == Mode::kRar || c.mode == Mode::kRcar;
}
bool uses_alignment(const PipelineConfig& c) { return c.mode != Mode::kBaseline; }

std::size_t rcr_invocations(const PipelineConfig& c) {
  if (c.mode == Mode::kRcar && c.rcr_every_step) return c.n_rar;
  return c.n_rcr;
}

std::size_t rcr_param_sets(const PipelineConfig& c) {
  if (!uses_rcr(c)) return 0;
  return c.per_step_rcr ? std::max<std::size_t>(1, rcr_invocations(c)) : 1;
}

}  // namespace

RegulatorParams RegulatorParams::create(ParameterSet& params, const std::string& prefix,
                                        const PipelineConfig& config, std::mt19937_64& rng) {
  RegulatorParams r;
  if (uses_alignment(config)) {
    r.alignment = AlignmentEncoder::create(params, prefix + ".align", config.dim, config.align_dim, rng);
    r.rar_alignment = r.alignment;
    if (uses_rar(config) && !config.share_alignment) {
      r.rar_alignment =
          AlignmentEncoder::create(params, prefix + ".rar_align", config.dim, config.align_dim, rng);
    }
  }
  const std::size_t sets = rcr_param_sets(config);
  for (std::size_t k = 0; k < sets; ++k) {
    const std::string name = sets == 1 ? prefix + ".rcr" : prefix + ".rcr" + std::to_string(k);
    r.rcr.push_back(RcrParams::create(params, name, config.rcr(), rng));
  }
  if (uses_rar(config)) r.rar = RarParams::create(params, prefix + ".rar", config.align_dim, rng);
  if (config.learn_initial_factors) {
    r.initial_e = params.add(prefix + ".initial_e", Tensor(Shape{1, 1, config.dim}, 1.0));
    r.initial_lambda = params.add(prefix + ".initial_lambda", Tensor::scalar(config.lambda0));
  }
  return r;
}

RegulatorParams RegulatorParams::bind(ParameterSet& params, const std::string& prefix,
                                      const PipelineConfig& config) {
  RegulatorParams r;
  if (uses_alignment(config)) {
    r.alignment = AlignmentEncoder::bind(params, prefix + ".align");
    r.rar_alignment = r.alignment;
    if (uses_rar(config) && !config.share_alignment) {
      r.rar_alignment = AlignmentEncoder::bind(params, prefix + ".rar_align");
    }
  }
  const std::size_t sets = rcr_param_sets(config);
  for (std::size_t k = 0; k < sets; ++k) {
    const std::string name = sets == 1 ? prefix + ".rcr" : prefix + ".rcr" + std::to_string(k);
    r.rcr.push_back(RcrParams::bind(params, name));
  }
  if (uses_rar(config)) r.rar = RarParams::bind(params, prefix + ".rar");
  if (config.learn_initial_factors) {
    r.initial_e = params.get(prefix + ".initial_e");
    r.initial_lambda = params.get(prefix + ".initial_lambda");
  }
  return r;
}

const RcrParams& RegulatorParams::rcr_at(std::size_t step) const {
  if (rcr.empty()) throw ConfigError("no correspondence regulator parameters");
  return rcr.size() == 1 ? rcr[0] : rcr.at(step);
}

FactorState RegulatorParams::initial_factors(const PipelineConfig& config) const {
  if (initial_e.defined()) return {initial_e, initial_lambda};
  return FactorState::initial(config.lambda0);
}

// ---- pairs ----

AttentionMasks PairFeatures::masks() const {
  return {query_mask.empty() ? nullptr : &query_mask, key_mask.empty() ? nullptr : &key_mask};
}

PairFeatures PairFeatures::make(const Var& regions, const Var& words, const Tensor& word_mask,
                                Direction direction) {
  PairFeatures p;
  bool padded = false;
  for (double v : word_mask.values()) padded = padded || v == 0.0;
  const Tensor mask = padded ? word_mask : Tensor();
  if (direction == Direction::kT2I) {
    p.queries = words;
    p.keys = regions;
    p.query_mask = mask;
  } else {
    p.queries = regions;
    p.keys = words;
    p.key_mask = mask;
  }
  return p;
}

InteractionAdapter builtin_attention() {
  return [](const Var& queries, const Var& keys, const FactorState& factors,
            const AttentionMasks& masks) { return attend(queries, keys, factors, masks).attended; };
}

// ---- scoring ----

namespace {

Var run_adapter(const InteractionAdapter& adapter, const PairFeatures& pairs,
                const FactorState& factors, std::size_t step) {
  Var attended = adapter(pairs.queries, pairs.keys, factors, pairs.masks());
  const Shape want{std::max(pairs.queries.shape().batch, pairs.keys.shape().batch),
                   pairs.queries.shape().rows, pairs.queries.shape().cols};
  if (!attended.defined() || !(attended.shape() == want)) {
    throw AdapterError("interaction adapter returned shape " +
                       (attended.defined() ? attended.shape().str() : std::string("<none>")) +
                       " at step " + std::to_string(step) + ", expected " + want.str());
  }
  if (!attended.value().all_finite()) {
    throw AdapterError("interaction adapter returned non-finite features at step " +
                       std::to_string(step));
  }
  return attended;
}

Tensor per_query_cosines(const Var& queries, const Var& attended) {
  ag::NoGradGuard no_grad;
  return ag::sum(ag::l2_normalize(queries, 2, 0.0) * ag::l2_normalize(attended, 2, 0.0), 2).value();
}

void record_attention(PipelineTrace* trace, const PairFeatures& pairs, const Var& attended,
                      const FactorState& factors) {
  if (!trace) return;
  trace->query_cosines.push_back(per_query_cosines(pairs.queries, attended));
  trace->lambdas.push_back(factors.lambda.value());
}

void record_beta(PipelineTrace* trace, const GuidanceState& g) {
  if (trace) trace->betas.push_back(g.beta.value());
}

// One correspondence-regulation pass: new factors from the current
// alignment (or query), then attention under them.
Var regulate_and_attend(const PairFeatures& pairs, const Var& alignment, FactorState& factors,
                        const PipelineConfig& config, const RegulatorParams& params,
                        const InteractionAdapter& adapter, std::size_t invocation,
                        std::size_t step, PipelineTrace* trace) {
  const Var& input = config.factor_source == FactorSource::kAlignment ? alignment : pairs.queries;
  factors = regulate(input, factors, params.rcr_at(invocation), config.residual_rcr);
  Var attended = run_adapter(adapter, pairs, factors, step);
  record_attention(trace, pairs, attended, factors);
  return attended;
}

}  // namespace

Var mean_cosine(const Var& queries, const Var& attended, const Tensor* query_mask) {
  const Var cos = ag::sum(ag::l2_normalize(queries, 2, 0.0) * ag::l2_normalize(attended, 2, 0.0), 2);
  const std::size_t nq = queries.shape().rows;
  if (!query_mask) return ag::scale(ag::sum(cos, 1), 1.0 / static_cast<double>(nq));
  Tensor inv_count(Shape{query_mask->batch(), 1, 1});
  for (std::size_t p = 0; p < query_mask->batch(); ++p) {
    double count = 0.0;
    for (std::size_t j = 0; j < nq; ++j) count += (*query_mask)(p, j, 0);
    if (count == 0.0) throw DomainError("pair without valid queries");
    inv_count(p, 0, 0) = 1.0 / count;
  }
  return ag::sum(cos * Var::constant(*query_mask), 1) * Var::constant(std::move(inv_count));
}

Var score_baseline(const PairFeatures& pairs, const PipelineConfig& config, PipelineTrace* trace) {
  const FactorState factors = FactorState::initial(config.lambda0);
  const Var attended = run_adapter(builtin_attention(), pairs, factors, 0);
  record_attention(trace, pairs, attended, factors);
  return mean_cosine(pairs.queries, attended, pairs.masks().queries);
}

Var score_rcr(const PairFeatures& pairs, const PipelineConfig& config,
              const RegulatorParams& params, const InteractionAdapter& adapter,
              PipelineTrace* trace) {
  FactorState factors = params.initial_factors(config);
  Var attended = run_adapter(adapter, pairs, factors, 0);
  record_attention(trace, pairs, attended, factors);
  for (std::size_t n = 1; n <= config.n_rcr; ++n) {
    const Var alignment = build_alignment(pairs.queries, attended, params.alignment);
    attended = regulate_and_attend(pairs, alignment, factors, config, params, adapter, n - 1, n, trace);
  }
  return mean_cosine(pairs.queries, attended, pairs.masks().queries);
}

Var score_rar(const PairFeatures& pairs, const PipelineConfig& config,
              const RegulatorParams& params, const InteractionAdapter& adapter,
              PipelineTrace* trace) {
  const Tensor* mask = pairs.masks().queries;
  const FactorState factors = params.initial_factors(config);
  const Var attended = run_adapter(adapter, pairs, factors, 0);
  record_attention(trace, pairs, attended, factors);
  const Var alignment = build_alignment(pairs.queries, attended, params.rar_alignment);
  GuidanceState guidance = init_guidance(alignment, mask);
  record_beta(trace, guidance);
  for (std::size_t n = 1; n <= config.n_rar; ++n) {
    guidance = step_guidance(guidance, alignment, params.rar, mask, config.residual_rar);
    record_beta(trace, guidance);
  }
  return similarity_head(guidance.guidance, params.rar);
}

Var score_rcar(const PairFeatures& pairs, const PipelineConfig& config,
               const RegulatorParams& params, const InteractionAdapter& adapter,
               PipelineTrace* trace) {
  const Tensor* mask = pairs.masks().queries;
  const bool shared = config.share_alignment;
  FactorState factors = params.initial_factors(config);
  Var attended = run_adapter(adapter, pairs, factors, 0);
  record_attention(trace, pairs, attended, factors);
  Var alignment = build_alignment(pairs.queries, attended, params.alignment);
  Var rar_alignment = shared ? alignment : build_alignment(pairs.queries, attended, params.rar_alignment);
  GuidanceState guidance = init_guidance(rar_alignment, mask);
  record_beta(trace, guidance);

  const std::size_t iterations =
      config.rcr_every_step ? config.n_rar : std::max(config.n_rar, config.n_rcr);
  std::size_t invocation = 0;
  for (std::size_t n = 1; n <= iterations; ++n) {
    if (config.rcr_every_step || n <= config.n_rcr) {
      attended = regulate_and_attend(pairs, alignment, factors, config, params, adapter,
                                     invocation++, n, trace);
      alignment = build_alignment(pairs.queries, attended, params.alignment);
      rar_alignment =
          shared ? alignment : build_alignment(pairs.queries, attended, params.rar_alignment);
    }
    if (n <= config.n_rar) {
      guidance = step_guidance(guidance, rar_alignment, params.rar, mask, config.residual_rar);
      record_beta(trace, guidance);
    }
  }
  if (config.rcar_head == ScoreHead::kMeanCosine) return mean_cosine(pairs.queries, attended, mask);
  return similarity_head(guidance.guidance, params.rar);
}

Var score(const PairFeatures& pairs, const PipelineConfig& config, const RegulatorParams& params,
          const InteractionAdapter& adapter, PipelineTrace* trace) {
  switch (config.mode) {
    case Mode::kBaseline: return score_baseline(pairs, config, trace);
    case Mode::kRcr: return score_rcr(pairs, config, params, adapter, trace);
    case Mode::kRar: return score_rar(pairs, config, params, adapter, trace);
    case Mode::kRcar: return score_rcar(pairs, config, params, adapter, trace);
  }
  throw ConfigError("unknown mode");
}

Scorer::Scorer(InteractionAdapter adapter, PipelineConfig config, RegulatorParams params)
    : adapter_(std::move(adapter)), config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

Var Scorer::operator()(const PairFeatures& pairs, PipelineTrace* trace) const {
  return score(pairs, config_, params_, adapter_, trace);
}

Scorer host_foreign_unit(InteractionAdapter adapter, const PipelineConfig& config,
                         const RegulatorParams& params) {
  if (!adapter) throw ConfigError("empty interaction adapter");
  return Scorer(std::move(adapter), config, params);
}

// ---- model ----

MatchingModel MatchingModel::create(const PipelineConfig& config, std::size_t vocab_size,
                                    std::size_t raw_dim, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  MatchingModel m;
  m.config_ = config;
  m.image_ = ImageProjector::create(m.params_, "image", raw_dim, config.dim, rng);
  m.text_ = TextEncoder::create(m.params_, "text", vocab_size, config.embed_dim, config.dim, rng);
  m.regulators_ = RegulatorParams::create(m.params_, "reg", config, rng);
  return m;
}

MatchingModel MatchingModel::from_params(const PipelineConfig& config, ParameterSet params) {
  config.validate();
  MatchingModel m;
  m.config_ = config;
  m.params_ = std::move(params);
  m.image_ = ImageProjector::bind(m.params_, "image");
  m.text_ = TextEncoder::bind(m.params_, "text");
  m.regulators_ = RegulatorParams::bind(m.params_, "reg", config);
  if (m.image_.dim() != config.dim || m.text_.dim() != config.dim) {
    throw ConfigError("parameter shapes do not match the configured dim");
  }
  return m;
}

MatchingModel MatchingModel::clone() const { return from_params(config_, params_.clone()); }

Var MatchingModel::encode_images(std::span<const RegionSet* const> regions) const {
  if (regions.empty()) throw DataError("no images to encode");
  const std::size_t k = regions[0]->num_regions();
  const std::size_t d_raw = regions[0]->raw_dim();
  Tensor stacked(Shape{regions.size(), k, d_raw});
  for (std::size_t b = 0; b < regions.size(); ++b) {
    if (regions[b]->num_regions() != k || regions[b]->raw_dim() != d_raw) {
      throw DataError("images in a batch must share K and d_raw");
    }
    std::copy(regions[b]->features.values().begin(), regions[b]->features.values().end(),
              stacked.data() + b * k * d_raw);
  }
  return image_(Var::constant(std::move(stacked)));
}

TextEncoding MatchingModel::encode_texts(std::span<const SentenceSet* const> sentences) const {
  if (sentences.empty()) throw DataError("no captions to encode");
  return text_(TokenBatch::from(sentences));
}

Var MatchingModel::score_pairs(const Var& images, const TextEncoding& texts,
                               std::span<const std::size_t> image_index,
                               std::span<const std::size_t> caption_index,
                               PipelineTrace* trace) const {
  if (image_index.size() != caption_index.size()) throw ShapeError("pair index size mismatch");
  const Var regions = ag::gather(images, image_index);
  const Var words = ag::gather(texts.features, caption_index);
  const std::size_t len = texts.mask.rows();
  Tensor mask(Shape{caption_index.size(), len, 1});
  for (std::size_t p = 0; p < caption_index.size(); ++p)
    for (std::size_t j = 0; j < len; ++j) mask(p, j, 0) = texts.mask(caption_index[p], j, 0);
  const PairFeatures pairs = PairFeatures::make(regions, words, mask, config_.direction);
  return score(pairs, config_, regulators_, builtin_attention(), trace);
}

Var MatchingModel::similarity_matrix(const Var& images, const TextEncoding& texts) const {
  const std::size_t ni = images.shape().batch;
  const std::size_t nc = texts.features.shape().batch;
  std::vector<std::size_t> ii, cc;
  ii.reserve(ni * nc);
  cc.reserve(ni * nc);
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t c = 0; c < nc; ++c) {
      ii.push_back(i);
      cc.push_back(c);
    }
  return ag::reshape(score_pairs(images, texts, ii, cc), Shape{1, ni, nc});
}

Tensor MatchingModel::score_dataset(const Dataset& data, std::size_t block) const {
  ag::NoGradGuard no_grad;
  if (block == 0) block = 64;
  std::vector<const RegionSet*> images;
  for (const auto& r : data.regions) images.push_back(&r);
  std::vector<const SentenceSet*> captions;
  for (const auto& s : data.sentences) captions.push_back(&s);
  const Var encoded_images = encode_images(images);
  Tensor out = Tensor::matrix(images.size(), captions.size());
  for (std::size_t c0 = 0; c0 < captions.size(); c0 += block) {
    const std::size_t c1 = std::min(captions.size(), c0 + block);
    const TextEncoding texts =
        encode_texts(std::span<const SentenceSet* const>(captions.data() + c0, c1 - c0));
    for (std::size_t i0 = 0; i0 < images.size(); i0 += block) {
      const std::size_t i1 = std::min(images.size(), i0 + block);
      std::vector<std::size_t> ii, cc;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t c = c0; c < c1; ++c) {
          ii.push_back(i);
          cc.push_back(c - c0);
        }
      const Var scores = score_pairs(encoded_images, texts, ii, cc);
      for (std::size_t p = 0; p < ii.size(); ++p) out.at(ii[p], cc[p] + c0) = scores.value()(p, 0, 0);
    }
  }
  return out;
}

// ---- records ----

std::vector<SimilarityRecord> ensemble(std::span<const SimilarityRecord> a,
                                       std::span<const SimilarityRecord> b) {
  if (a.size() != b.size()) {
    throw DataError("ensemble inputs cover different pair sets (" + std::to_string(a.size()) +
                    " vs " + std::to_string(b.size()) + " records)");
  }
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!index.emplace(std::make_pair(b[i].image_id, b[i].caption_id), i).second) {
      throw DataError("duplicate pair " + b[i].image_id + "/" + b[i].caption_id);
    }
  }
  std::vector<SimilarityRecord> out;
  out.reserve(a.size());
  for (const auto& r : a) {
    auto it = index.find({r.image_id, r.caption_id});
    if (it == index.end()) {
      throw DataError("pair " + r.image_id + "/" + r.caption_id + " missing from second score set");
    }
    const auto& other = b[it->second];
    out.push_back({r.image_id, r.caption_id, "ensemble", r.mode == other.mode ? r.mode : "mixed",
                   (r.score + other.score) / 2.0});
  }
  return out;
}

std::string format_score(double score) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", score);
  return buf;
}

void write_scores(const std::filesystem::path& path, std::span<const SimilarityRecord> records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scores " + path.string());
  out << "image_id\tcaption_id\tdirection\tmode\tscore\n";
  for (const auto& r : records) {
    out << r.image_id << '\t' << r.caption_id << '\t' << r.direction << '\t' << r.mode << '\t'
        << format_score(r.score) << '\n';
  }
}

std::vector<SimilarityRecord> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read scores " + path.string());
  std::vector<SimilarityRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("image_id\t", 0) == 0) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string x; std::getline(fields, x, '\t');) f.push_back(x);
    if (f.size() != 5) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
    }
    char* end = nullptr;
    const double s = std::strtod(f[4].c_str(), &end);
    if (end == f[4].c_str() || *end != '\0' || !std::isfinite(s)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + f[4] + "'");
    }
    out.push_back({f[0], f[1], f[2], f[3], s});
  }
  return out;
}

std::vector<SimilarityRecord> score_records(const Dataset& data, const Tensor& matrix,
                                            const PipelineConfig& config) {
  if (matrix.rows() != data.regions.size() || matrix.cols() != data.sentences.size()) {
    throw ShapeError("score matrix does not match the dataset");
  }
  std::vector<SimilarityRecord> out;
  out.reserve(matrix.size());
  for (std::size_t i = 0; i < matrix.rows(); ++i)
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      out.push_back({data.regions[i].image_id, data.sentences[c].caption_id,
                     to_string(config.direction), to_string(config.mode), matrix.at(i, c)});
    }
  return out;
}

}  // namespace regmatch
