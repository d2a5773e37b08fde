#include "regmatch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "regmatch/errors.hpp"
#include "regmatch/pipeline.hpp"
#include "regmatch/training.hpp"

namespace regmatch {

using ag::Var;

namespace {

struct Probe {
  std::vector<std::pair<std::string, Var>> params;
  std::function<Var()> loss;
};

using Builder = std::function<Probe(std::mt19937_64&, const GradCheckSpec&)>;

Tensor normal(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(shape);
  for (double& x : t.values()) x = dist(rng);
  return t;
}

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& x : t.values()) x = dist(rng);
  return t;
}

constexpr std::size_t kPairs = 2;

PipelineConfig small_config(const GradCheckSpec& spec, Mode mode, Direction direction, std::size_t steps) {
  PipelineConfig c = PipelineConfig::make(mode, direction, steps);
  c.dim = spec.dim;
  c.align_dim = spec.align_dim;
  c.e_hidden = 5;
  c.lambda_hidden = 3;
  c.embed_dim = 4;
  return c;
}

// Last query of the second pair is padding.
Tensor query_mask(std::size_t queries) {
  Tensor mask(Shape{kPairs, queries, 1}, 1.0);
  if (queries > 1) mask(kPairs - 1, queries - 1, 0) = 0.0;
  return mask;
}

void add_set(Probe& probe, const ParameterSet& set) {
  for (const auto& entry : set.entries()) probe.params.push_back(entry);
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  return ag::sum(ag::sum(ag::sum(x * Var::constant(weights), 2), 1), 0);
}

Probe linear_head(std::mt19937_64& rng, const GradCheckSpec& spec) {
  auto set = std::make_shared<ParameterSet>();
  const Linear head = Linear::create(*set, "head", spec.align_dim, 1, rng, false);
  const Var x = Var::parameter(normal(Shape{kPairs, 1, spec.align_dim}, rng));
  const Tensor r = normal(Shape{kPairs, 1, 1}, rng);
  Probe p;
  add_set(p, *set);
  p.params.emplace_back("guidance", x);
  p.loss = [=] { return weighted_sum(head(x), r); };
  return p;
}

Probe attention(std::mt19937_64& rng, const GradCheckSpec& spec) {
  const Var q = Var::parameter(normal(Shape{kPairs, spec.words, spec.dim}, rng));
  const Var k = Var::parameter(normal(Shape{kPairs, spec.regions, spec.dim}, rng));
  const Var e = Var::parameter(uniform(Shape{kPairs, spec.words, spec.dim}, rng, -0.9, 0.9));
  const Var lambda = Var::parameter(uniform(Shape{kPairs, spec.words, 1}, rng, 1.0, 10.0));
  const Tensor mask = query_mask(spec.words);
  const Tensor r = normal(Shape{kPairs, spec.words, spec.dim}, rng);
  Probe p;
  p.params = {{"queries", q}, {"keys", k}, {"e", e}, {"lambda", lambda}};
  p.loss = [=] {
    const FactorState f{e, lambda};
    return weighted_sum(attend(q, k, f, AttentionMasks{&mask, nullptr}).attended, r);
  };
  return p;
}

Probe rcr_composite(std::mt19937_64& rng, const GradCheckSpec& spec) {
  auto set = std::make_shared<ParameterSet>();
  const PipelineConfig config = small_config(spec, Mode::kRcr, Direction::kT2I, 1);
  const AlignmentEncoder align = AlignmentEncoder::create(*set, "align", spec.dim, spec.align_dim, rng);
  const RcrParams rcr = RcrParams::create(*set, "rcr", config.rcr(), rng);
  const Var q = Var::parameter(normal(Shape{kPairs, spec.words, spec.dim}, rng));
  const Var k = Var::parameter(normal(Shape{kPairs, spec.regions, spec.dim}, rng));
  const Tensor mask = query_mask(spec.words);
  const Tensor r = normal(Shape{kPairs, spec.words, spec.dim}, rng);
  Probe p;
  add_set(p, *set);
  p.params.emplace_back("queries", q);
  p.params.emplace_back("keys", k);
  p.loss = [=] {
    const AttentionMasks masks{&mask, nullptr};
    const FactorState f0 = FactorState::initial(config.lambda0);
    const Var v0 = attend(q, k, f0, masks).attended;
    const Var a = build_alignment(q, v0, align);
    const FactorState f1 = regulate(a, f0, rcr, true);
    return weighted_sum(attend(q, k, f1, masks).attended, r);
  };
  return p;
}

Probe rar_composite(std::mt19937_64& rng, const GradCheckSpec& spec) {
  auto set = std::make_shared<ParameterSet>();
  const RarParams rar = RarParams::create(*set, "rar", spec.align_dim, rng);
  const Var a = Var::parameter(normal(Shape{kPairs, spec.words, spec.align_dim}, rng));
  const Tensor mask = query_mask(spec.words);
  const Tensor r = normal(Shape{kPairs, 1, 1}, rng);
  Probe p;
  add_set(p, *set);
  p.params.emplace_back("alignments", a);
  p.loss = [=] {
    GuidanceState g = init_guidance(a, &mask);
    for (int n = 0; n < 2; ++n) g = step_guidance(g, a, rar, &mask);
    return weighted_sum(similarity_head(g.guidance, rar), r);
  };
  return p;
}

Builder pipeline_fragment(Mode mode, Direction direction) {
  return [mode, direction](std::mt19937_64& rng, const GradCheckSpec& spec) {
    auto set = std::make_shared<ParameterSet>();
    const PipelineConfig config = small_config(spec, mode, direction, 2);
    const RegulatorParams reg = RegulatorParams::create(*set, "reg", config, rng);
    const Var regions = Var::parameter(normal(Shape{kPairs, spec.regions, spec.dim}, rng));
    const Var words = Var::parameter(normal(Shape{kPairs, spec.words, spec.dim}, rng));
    const Tensor mask = query_mask(spec.words);
    const Tensor r = normal(Shape{kPairs, 1, 1}, rng);
    Probe p;
    add_set(p, *set);
    p.params.emplace_back("regions", regions);
    p.params.emplace_back("words", words);
    p.loss = [=] {
      const PairFeatures pairs = PairFeatures::make(regions, words, mask, config.direction);
      return weighted_sum(score(pairs, config, reg, builtin_attention()), r);
    };
    return p;
  };
}

Dataset tiny_dataset(std::mt19937_64& rng, const GradCheckSpec& spec) {
  SyntheticSpec s;
  s.num_pairs = 3;
  s.num_regions = spec.regions;
  s.num_words = spec.words;
  s.raw_dim = spec.dim + 2;
  s.latent_concept_count = 4;
  s.noise_scale = 0.1;
  s.seed = rng();
  Dataset data = generate_synthetic(s).data;
  // Uneven caption lengths exercise padding.
  data.sentences[1].token_ids.pop_back();
  data.sentences[1].token_ids.back() = Vocabulary::kEnd;
  data.sentences[1].token_tags.clear();
  return data;
}

Builder model_fragment(Mode mode) {
  return [mode](std::mt19937_64& rng, const GradCheckSpec& spec) {
    auto data = std::make_shared<Dataset>(tiny_dataset(rng, spec));
    const PipelineConfig config = small_config(spec, mode, Direction::kT2I, 2);
    auto model = std::make_shared<MatchingModel>(
        MatchingModel::create(config, data->vocabulary.size(), data->regions[0].raw_dim(), rng()));
    const Tensor r = normal(Shape{1, 3, 3}, rng, 0.5);
    Probe p;
    add_set(p, model->params());
    p.loss = [=] {
      std::vector<const RegionSet*> images;
      for (const auto& x : data->regions) images.push_back(&x);
      std::vector<const SentenceSet*> captions;
      for (const auto& x : data->sentences) captions.push_back(&x);
      const Var sims = model->similarity_matrix(model->encode_images(images), model->encode_texts(captions));
      return hinge_loss(sims, 0.2) + weighted_sum(sims, r);
    };
    return p;
  };
}

Probe gru(std::mt19937_64& rng, const GradCheckSpec& spec) {
  auto data = std::make_shared<Dataset>(tiny_dataset(rng, spec));
  auto set = std::make_shared<ParameterSet>();
  const TextEncoder encoder = TextEncoder::create(*set, "text", data->vocabulary.size(), 4, spec.dim, rng);
  const TokenBatch batch = TokenBatch::from(std::span<const SentenceSet>(data->sentences));
  const Tensor r = normal(Shape{batch.size(), batch.max_length, spec.dim}, rng);
  Probe p;
  add_set(p, *set);
  p.loss = [=] { return weighted_sum(encoder(batch).features, r); };
  return p;
}

Probe hinge(std::mt19937_64& rng, const GradCheckSpec&) {
  const Var sims = Var::parameter(normal(Shape{1, 4, 4}, rng, 0.3));
  Probe p;
  p.params = {{"similarities", sims}};
  p.loss = [=] { return hinge_loss(sims, 0.2); };
  return p;
}

const std::map<std::string, Builder>& registry() {
  static const std::map<std::string, Builder> r = {
      {"linear_head", linear_head},
      {"attend", attention},
      {"rcr", rcr_composite},
      {"rar", rar_composite},
      {"rcar", pipeline_fragment(Mode::kRcar, Direction::kT2I)},
      {"rcar_i2t", pipeline_fragment(Mode::kRcar, Direction::kI2T)},
      {"baseline", pipeline_fragment(Mode::kBaseline, Direction::kT2I)},
      {"rcr_mode", pipeline_fragment(Mode::kRcr, Direction::kT2I)},
      {"rar_mode", pipeline_fragment(Mode::kRar, Direction::kT2I)},
      {"model_baseline", model_fragment(Mode::kBaseline)},
      {"model_rcr", model_fragment(Mode::kRcr)},
      {"model_rar", model_fragment(Mode::kRar)},
      {"model_rcar", model_fragment(Mode::kRcar)},
      {"gru", gru},
      {"hinge", hinge},
  };
  return r;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

enum class Outcome { kOk, kNearKink };

// Fills per-parameter relative errors, or reports a kink problem.
Outcome check_probe(Probe& probe, const GradCheckSpec& spec, std::vector<double>& errors) {
  std::uint64_t signature = 0;
  {
    ag::KinkProbe kinks;
    for (auto& [name, var] : probe.params) var.zero_grad();
    const Var loss = probe.loss();
    if (kinks.min_distance() < spec.kink_margin) return Outcome::kNearKink;
    signature = kinks.signature();
    loss.backward();
  }
  auto eval = [&](double& slot, double value, bool& crossed) {
    const double saved = slot;
    slot = value;
    ag::NoGradGuard no_grad;
    ag::KinkProbe kinks;
    const double f = probe.loss().value().item();
    crossed = crossed || kinks.signature() != signature;
    slot = saved;
    return f;
  };
  errors.assign(probe.params.size(), 0.0);
  for (std::size_t p = 0; p < probe.params.size(); ++p) {
    auto& [name, var] = probe.params[p];
    std::vector<double> analytic(var.value().size(), 0.0);
    if (!var.grad().empty()) analytic.assign(var.grad().values().begin(), var.grad().values().end());
    if (name == spec.corrupt_param) {
      for (double& g : analytic) g *= spec.corrupt_scale;
    }
    std::vector<double> numeric(analytic.size());
    std::vector<double> diff(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      double& slot = var.mutable_value().data()[i];
      bool crossed = false;
      const double x = slot;
      const double h = spec.step;
      if (spec.order == 4) {
        const double f2 = eval(slot, x + 2 * h, crossed), f1 = eval(slot, x + h, crossed);
        const double b1 = eval(slot, x - h, crossed), b2 = eval(slot, x - 2 * h, crossed);
        numeric[i] = (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * h);
      } else {
        numeric[i] = (eval(slot, x + h, crossed) - eval(slot, x - h, crossed)) / (2.0 * h);
      }
      if (crossed) return Outcome::kNearKink;
      diff[i] = analytic[i] - numeric[i];
    }
    errors[p] = norm(diff) / std::max({norm(analytic), norm(numeric), spec.error_floor});
  }
  return Outcome::kOk;
}

}  // namespace

std::vector<std::string> grad_check_fragments() {
  std::vector<std::string> names;
  for (const auto& [name, builder] : registry()) names.push_back(name);
  return names;
}

GradCheckReport grad_check(const GradCheckSpec& spec) {
  const auto it = registry().find(spec.fragment);
  if (it == registry().end()) {
    std::string known;
    for (const auto& n : grad_check_fragments()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown grad-check fragment '" + spec.fragment + "' (" + known + ")");
  }
  if (!(spec.step > 0.0) || spec.probes == 0) throw ConfigError("grad-check needs step > 0 and probes >= 1");
  if (spec.order != 2 && spec.order != 4) throw ConfigError("stencil order must be 2 or 4");
  if (!(spec.error_floor > 0.0)) throw ConfigError("error floor must be > 0");
  if (spec.dim == 0 || spec.align_dim == 0 || spec.regions == 0 || spec.words < 2) {
    throw ConfigError("grad-check dimensions too small");
  }
  std::mt19937_64 rng(spec.seed);
  GradCheckReport report;
  report.fragment = spec.fragment;
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  bool corrupt_found = spec.corrupt_param.empty();
  for (std::size_t probe = 0; probe < spec.probes; ++probe) {
    bool done = false;
    for (std::size_t attempt = 0; attempt <= spec.retry_budget && !done; ++attempt) {
      Probe p = it->second(rng, spec);
      std::vector<double> errors;
      if (check_probe(p, spec, errors) == Outcome::kNearKink) {
        ++report.resampled;
        continue;
      }
      done = true;
      ++report.probes;
      for (std::size_t i = 0; i < p.params.size(); ++i) {
        const std::string& name = p.params[i].first;
        corrupt_found = corrupt_found || name == spec.corrupt_param;
        if (!worst.count(name)) order.push_back(name);
        worst[name] = std::max(worst[name], errors[i]);
        if (errors[i] >= report.max_rel_error) {
          report.max_rel_error = errors[i];
          report.worst_param = name;
        }
      }
    }
    if (!done) ++report.flagged;
  }
  if (!corrupt_found) {
    throw ConfigError("fragment " + spec.fragment + " has no parameter '" + spec.corrupt_param + "'");
  }
  for (const auto& name : order) report.params.push_back({name, worst[name]});
  report.passed = report.flagged == 0 && report.probes > 0 && report.max_rel_error <= spec.tolerance;
  return report;
}

std::string GradCheckReport::str() const {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", max_rel_error);
  out << "fragment=" << fragment << " probes=" << probes << " resampled=" << resampled
      << " flagged=" << flagged << " max_rel_error=" << buf << " worst_param=" << worst_param
      << " result=" << (passed ? "pass" : "fail") << "\n";
  for (const auto& p : params) {
    std::snprintf(buf, sizeof buf, "%.3e", p.rel_error);
    out << "  " << p.name << " " << buf << "\n";
  }
  return out.str();
}

}  // namespace regmatch
