#include "regmatch/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "regmatch/checkpoint.hpp"
#include "regmatch/errors.hpp"
#include "regmatch/evaluation.hpp"

namespace regmatch {

using ag::Var;

void LossConfig::validate() const {
  if (!(margin > 0.0) || !std::isfinite(margin)) throw ConfigError("margin must be > 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
}

// ---- hinge loss ----

namespace {

struct HardNegatives {
  std::vector<std::size_t> caption;  // per row
  std::vector<std::size_t> image;    // per column
};

void require_square(const Tensor& s) {
  if (s.batch() != 1 || s.rows() != s.cols()) {
    throw ShapeError("hinge loss needs a square similarity matrix, got " + s.shape().str());
  }
}

HardNegatives hardest(const Tensor& s) {
  const std::size_t n = s.rows();
  HardNegatives h{std::vector<std::size_t>(n, n), std::vector<std::size_t>(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < n; ++c) {
      if (c == i) continue;
      if (h.caption[i] == n || s.at(i, c) > s.at(i, h.caption[i])) h.caption[i] = c;
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i == c) continue;
      if (h.image[c] == n || s.at(i, c) > s.at(h.image[c], c)) h.image[c] = i;
    }
  }
  return h;
}

// Distance to the nearest competing negative, where the arg-max would flip.
double runner_up_gap(const Tensor& s, std::size_t fixed, bool row, std::size_t best) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.rows(); ++k) {
    if (k == fixed || k == best) continue;
    const double a = row ? s.at(fixed, best) : s.at(best, fixed);
    const double b = row ? s.at(fixed, k) : s.at(k, fixed);
    gap = std::min(gap, std::abs(a - b));
  }
  return gap;
}

}  // namespace

double hinge_loss(const Tensor& s, double margin) {
  require_square(s);
  const std::size_t n = s.rows();
  if (n < 2) return 0.0;
  const HardNegatives h = hardest(s);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    loss += std::max(0.0, margin + s.at(i, h.caption[i]) - s.at(i, i));
    loss += std::max(0.0, margin + s.at(h.image[i], i) - s.at(i, i));
  }
  return loss;
}

Var hinge_loss(const Var& sims, double margin) {
  const Tensor& s = sims.value();
  require_square(s);
  const std::size_t n = s.rows();
  if (ag::kink_probe_active() && n >= 2) {
    const HardNegatives h = hardest(s);
    for (std::size_t i = 0; i < n; ++i) {
      const double row = margin + s.at(i, h.caption[i]) - s.at(i, i);
      const double col = margin + s.at(h.image[i], i) - s.at(i, i);
      ag::note_kink(std::abs(row), row > 0.0);
      ag::note_kink(std::abs(col), col > 0.0);
      ag::note_kink(runner_up_gap(s, i, true, h.caption[i]), h.caption[i]);
      ag::note_kink(runner_up_gap(s, i, false, h.image[i]), h.image[i]);
    }
  }
  const double value = hinge_loss(s, margin);
  return ag::make_result(Tensor::scalar(value), {sims}, [margin](ag::Node& self) {
    ag::Node& in = *self.inputs[0];
    const Tensor& s = in.value;
    const std::size_t n = s.rows();
    if (n < 2) return;
    const double g = self.grad.item();
    Tensor& grad = in.grad_buffer();
    const HardNegatives h = hardest(s);
    for (std::size_t i = 0; i < n; ++i) {
      if (margin + s.at(i, h.caption[i]) - s.at(i, i) > 0.0) {
        grad.at(i, h.caption[i]) += g;
        grad.at(i, i) -= g;
      }
      if (margin + s.at(h.image[i], i) - s.at(i, i) > 0.0) {
        grad.at(h.image[i], i) += g;
        grad.at(i, i) -= g;
      }
    }
  });
}

// ---- schedule ----

void TrainSchedule::validate() const {
  for (std::size_t p = 0; p < phases.size(); ++p) {
    if (!(phases[p].lr > 0.0) || !std::isfinite(phases[p].lr)) {
      throw ConfigError("learning rates must be > 0");
    }
    if (p > 0 && phases[p].lr > phases[p - 1].lr) {
      throw ConfigError("learning rate must not increase across phases");
    }
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
}

std::size_t TrainSchedule::total_epochs() const {
  std::size_t total = 0;
  for (const auto& p : phases) total += p.epochs;
  return total;
}

double TrainSchedule::lr_at(std::size_t epoch) const {
  for (const auto& p : phases) {
    if (epoch < p.epochs) return p.lr;
    epoch -= p.epochs;
  }
  if (phases.empty()) throw ConfigError("empty schedule");
  return phases.back().lr;
}

TrainSchedule TrainSchedule::parse(const std::string& text) {
  TrainSchedule s;
  s.phases.clear();
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule phase '" + item + "' is not lr:epochs");
    LrPhase phase;
    try {
      std::size_t used = 0;
      phase.lr = std::stod(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("lr");
      const std::string epochs = item.substr(colon + 1);
      if (epochs.empty() || epochs.find_first_not_of("0123456789") != std::string::npos) {
        throw std::invalid_argument("epochs");
      }
      phase.epochs = std::stoul(epochs);
    } catch (const std::exception&) {
      throw ConfigError("schedule phase '" + item + "' is not lr:epochs");
    }
    s.phases.push_back(phase);
  }
  s.validate();
  return s;
}

std::string TrainSchedule::str() const {
  std::string out;
  char buf[64];
  for (const auto& p : phases) {
    std::snprintf(buf, sizeof buf, "%.17g:%zu", p.lr, p.epochs);
    if (!out.empty()) out += ',';
    out += buf;
  }
  return out;
}

// ---- Adam ----

Adam::Adam(ParameterSet& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, var] : params.entries()) {
    m_.emplace_back(var.shape());
    v_.emplace_back(var.shape());
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto& entries = params_->entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Var& var = entries[p].second;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    double* w = var.mutable_value().data();
    double* m = m_[p].data();
    double* v = v_[p].data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g.data()[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g.data()[i] * g.data()[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---- config ----

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "mode", "direction", "steps", "n_rar", "n_rcr", "lambda0", "residual_rcr", "residual_rar",
      "rcr_every_step", "share_alignment", "per_step_rcr", "learn_initial_factors",
      "factor_source", "rcar_head", "dim", "align_dim", "e_hidden", "lambda_hidden", "embed_dim",
      "margin", "batch_size", "schedule", "seed", "eval_block", "run_dir",
      "checkpoint_every_epoch", "init_from", "beta1", "beta2", "eps"};
  return keys;
}

}  // namespace

void TrainConfig::validate() const {
  pipeline.validate();
  loss.validate();
  schedule.validate();
  if (eval_block == 0) throw ConfigError("eval_block must be >= 1");
}

ConfigMap TrainConfig::to_map() const {
  ConfigMap m = pipeline.to_map();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", loss.margin);
  m.set("margin", buf);
  m.set("batch_size", std::to_string(loss.batch_size));
  m.set("schedule", schedule.str());
  std::snprintf(buf, sizeof buf, "%.17g", schedule.beta1);
  m.set("beta1", buf);
  std::snprintf(buf, sizeof buf, "%.17g", schedule.beta2);
  m.set("beta2", buf);
  std::snprintf(buf, sizeof buf, "%.17g", schedule.eps);
  m.set("eps", buf);
  m.set("seed", std::to_string(seed));
  m.set("eval_block", std::to_string(eval_block));
  m.set("checkpoint_every_epoch", checkpoint_every_epoch ? "true" : "false");
  if (!init_from.empty()) m.set("init_from", init_from.string());
  return m;
}

TrainConfig TrainConfig::from_map(const ConfigMap& map) {
  for (const auto& [key, value] : map.values()) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  TrainConfig c;
  c.pipeline = PipelineConfig::from_map(map);
  c.loss.margin = map.get_double("margin", c.loss.margin);
  c.loss.batch_size = map.get_size("batch_size", c.loss.batch_size);
  if (map.has("schedule")) c.schedule = TrainSchedule::parse(map.get_string("schedule", ""));
  c.schedule.beta1 = map.get_double("beta1", c.schedule.beta1);
  c.schedule.beta2 = map.get_double("beta2", c.schedule.beta2);
  c.schedule.eps = map.get_double("eps", c.schedule.eps);
  const long long seed = map.get_int("seed", 1);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.eval_block = map.get_size("eval_block", c.eval_block);
  c.run_dir = map.get_string("run_dir", "");
  c.checkpoint_every_epoch = map.get_bool("checkpoint_every_epoch", c.checkpoint_every_epoch);
  c.init_from = map.get_string("init_from", "");
  c.validate();
  return c;
}

// ---- loop ----

namespace {

struct Batch {
  std::vector<const RegionSet*> images;
  std::vector<const SentenceSet*> captions;
  std::vector<std::size_t> caption_index;
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& image_of,
                 std::span<const std::size_t> captions) {
  Batch b;
  for (std::size_t c : captions) {
    b.captions.push_back(&data.sentences[c]);
    b.images.push_back(&data.regions[image_of[c]]);
    b.caption_index.push_back(c);
  }
  return b;
}

Var batch_loss(const MatchingModel& model, const Batch& batch, double margin) {
  const Var images = model.encode_images(batch.images);
  const TextEncoding texts = model.encode_texts(batch.captions);
  const Var sims = model.similarity_matrix(images, texts);
  return hinge_loss(sims, margin);
}

std::vector<std::vector<std::size_t>> split_batches(const std::vector<std::size_t>& order,
                                                    std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (end - i < 2) break;
    out.emplace_back(order.begin() + i, order.begin() + end);
  }
  return out;
}

[[noreturn]] void abort_on_nan(const TrainConfig& config, const MatchingModel& model,
                               const Batch& batch, std::size_t epoch, std::size_t step) {
  std::ostringstream dump;
  dump << "non-finite loss at epoch " << epoch << " step " << step << "\n";
  dump << "captions:";
  for (const auto* s : batch.captions) dump << ' ' << s->caption_id;
  dump << "\nimages:";
  for (const auto* r : batch.images) dump << ' ' << r->image_id;
  dump << "\n";
  {
    ag::NoGradGuard no_grad;
    const Var images = model.encode_images(batch.images);
    const TextEncoding texts = model.encode_texts(batch.captions);
    const Tensor sims = model.similarity_matrix(images, texts).value();
    dump << "similarities:\n";
    for (std::size_t i = 0; i < sims.rows(); ++i) {
      for (std::size_t c = 0; c < sims.cols(); ++c) dump << (c ? "\t" : "") << format_score(sims.at(i, c));
      dump << "\n";
    }
  }
  for (const auto& [name, var] : model.params().entries()) {
    if (!var.value().all_finite()) dump << "non-finite parameter " << name << "\n";
  }
  if (!config.run_dir.empty()) {
    std::ofstream(config.run_dir / "nan_batch.txt") << dump.str();
  }
  throw TrainingError(dump.str());
}

void project_factors(MatchingModel& model) {
  const RegulatorParams& reg = model.regulators();
  if (!reg.initial_e.defined()) return;
  ag::Var e = reg.initial_e;
  for (double& x : e.mutable_value().values()) x = std::clamp(x, -1.0, 1.0);
  ag::Var lambda = reg.initial_lambda;
  for (double& x : lambda.mutable_value().values()) x = std::max(x, 0.0);
}

}  // namespace

double dataset_loss(const MatchingModel& model, const Dataset& data, const LossConfig& loss) {
  ag::NoGradGuard no_grad;
  const auto image_of = data.caption_image_index();
  std::vector<std::size_t> order(data.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batches = split_batches(order, loss.batch_size);
  if (batches.empty()) throw DataError("dataset too small for one batch");
  double total = 0.0;
  for (const auto& ids : batches) {
    total += batch_loss(model, make_batch(data, image_of, ids), loss.margin).value().item();
  }
  return total / static_cast<double>(batches.size());
}

double recall_sum(const MatchingModel& model, const Dataset& data, std::size_t block) {
  const Tensor scores = model.score_dataset(data, block);
  const auto image_of = data.caption_image_index();
  const std::size_t gallery = std::min(data.regions.size(), data.sentences.size());
  std::vector<std::size_t> ks;
  for (std::size_t k : kDefaultKs) ks.push_back(std::min(k, gallery));
  return evaluate_retrieval(scores, image_of, ks).rsum();
}

namespace {

void warm_start(MatchingModel& model, const Checkpoint& source) {
  std::size_t copied = 0;
  for (auto& [name, var] : model.params().entries()) {
    if (!source.params.contains(name)) continue;
    const Tensor& value = source.params.get(name).value();
    if (value.shape() != var.shape()) {
      throw ConfigError("init_from tensor " + name + " has shape " + value.shape().str() +
                        ", model expects " + var.shape().str());
    }
    var.mutable_value() = value;
    ++copied;
  }
  if (copied == 0) throw ConfigError("init_from checkpoint shares no tensors with the model");
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset* val_data,
                  std::ostream* log) {
  config.validate();
  if (train_data.sentences.size() < 2) throw DataError("training needs at least two captions");
  const std::size_t raw_dim = train_data.regions.at(0).raw_dim();
  TrainResult result{
      MatchingModel::create(config.pipeline, train_data.vocabulary.size(), raw_dim, config.seed),
      MatchingModel(), 0, 0.0, {}};
  MatchingModel& model = result.model;
  if (!config.init_from.empty()) warm_start(model, Checkpoint::load(config.init_from));
  const auto image_of = train_data.caption_image_index();

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(model.params(), config.schedule.beta1, config.schedule.beta2, config.schedule.eps);

  if (!config.run_dir.empty()) {
    std::filesystem::create_directories(config.run_dir);
    config.to_map().save(config.run_dir / "config.txt");
  }
  auto save = [&](const MatchingModel& m, const std::string& name, std::size_t epoch) {
    if (config.run_dir.empty()) return;
    ConfigMap extra;
    extra.set("epoch", std::to_string(epoch));
    std::ostringstream state;
    state << rng;
    extra.set("rng_state", state.str());
    make_checkpoint(m, train_data.vocabulary, extra).save(config.run_dir / name);
  };

  result.initial_loss = dataset_loss(model, train_data, config.loss);
  double best_rsum = -1.0;
  result.best = model.clone();

  std::vector<std::size_t> order(train_data.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t epochs = config.schedule.total_epochs();
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr = config.schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    const auto batches = split_batches(order, config.loss.batch_size);
    double total = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Batch batch = make_batch(train_data, image_of, batches[step]);
      model.params().zero_grad();
      const Var loss = batch_loss(model, batch, config.loss.margin);
      const double value = loss.value().item();
      if (!std::isfinite(value)) abort_on_nan(config, model, batch, epoch + 1, step + 1);
      loss.backward();
      adam.step(lr);
      project_factors(model);
      total += value;
      if (log) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch=%zu step=%zu loss=%.9g lr=%.9g\n", epoch + 1,
                      step + 1, value, lr);
        *log << line;
      }
    }
    model.params().zero_grad();
    EpochStats stats{epoch + 1, batches.empty() ? 0.0 : total / static_cast<double>(batches.size()),
                     lr, std::nullopt};
    if (val_data) {
      stats.val_rsum = recall_sum(model, *val_data, config.eval_block);
      if (*stats.val_rsum > best_rsum) {
        best_rsum = *stats.val_rsum;
        result.best = model.clone();
        result.best_epoch = epoch + 1;
        save(model, "best.xmck", epoch + 1);
      }
    }
    if (log && stats.val_rsum) {
      char line[120];
      std::snprintf(line, sizeof line, "epoch=%zu mean_loss=%.9g val_rsum=%.9g\n", epoch + 1,
                    stats.mean_loss, *stats.val_rsum);
      *log << line;
    }
    if (log) log->flush();
    if (config.checkpoint_every_epoch) save(model, "epoch_" + std::to_string(epoch + 1) + ".xmck", epoch + 1);
    result.epochs.push_back(stats);
  }
  if (!val_data) {
    result.best = model.clone();
    result.best_epoch = epochs;
  }
  save(model, "final.xmck", epochs);
  if (!val_data) save(model, "best.xmck", epochs);
  return result;
}

}  // namespace regmatch
