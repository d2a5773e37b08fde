#include "regmatch/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "regmatch/checkpoint.hpp"
#include "regmatch/errors.hpp"
#include "regmatch/evaluation.hpp"
#include "regmatch/gradcheck.hpp"
#include "regmatch/training.hpp"

namespace regmatch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad k list '" + text + "'");
    }
    ks.push_back(std::stoul(item));
  }
  if (ks.empty()) throw ConfigError("empty k list");
  return ks;
}

std::string fmt(double x) { return format_score(x); }

void put_recall(std::ostream& out, json& j, const std::string& prefix, const RecallReport& r) {
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    const std::string key = prefix + r.direction + ".r@" + std::to_string(r.ks[i]);
    out << key << "=" << fmt(r.recalls[i]) << "\n";
    j[r.direction]["r@" + std::to_string(r.ks[i])] = r.recalls[i];
  }
}

void put_report(std::ostream& out, json& j, const std::string& prefix, const RetrievalReport& r) {
  put_recall(out, j, prefix, r.image_to_text);
  put_recall(out, j, prefix, r.text_to_image);
  out << prefix << "rsum=" << fmt(r.rsum()) << "\n";
  j["rsum"] = r.rsum();
}

struct Report {
  std::string text;
  json data;
};

Report retrieval_report(const Tensor& scores, std::span<const std::size_t> caption_image,
                        std::span<const std::size_t> ks, std::size_t folds) {
  Report rep;
  std::ostringstream out;
  out << "images=" << scores.rows() << "\ncaptions=" << scores.cols() << "\n";
  rep.data["images"] = scores.rows();
  rep.data["captions"] = scores.cols();
  if (folds > 1) {
    const FoldedReport f = five_fold_eval(scores, caption_image, ks, folds);
    for (std::size_t i = 0; i < f.folds.size(); ++i) {
      json j;
      put_report(out, j, "fold" + std::to_string(i + 1) + ".", f.folds[i]);
      rep.data["folds"].push_back(j);
    }
    put_report(out, rep.data["mean"], "mean.", f.mean);
    put_report(out, rep.data["full"], "full.", f.full);
  } else {
    put_report(out, rep.data["full"], "full.", evaluate_retrieval(scores, caption_image, ks));
  }
  rep.text = out.str();
  return rep;
}

void write_report(const Report& rep, const fs::path& stem) {
  std::ofstream(stem.string() + ".txt") << rep.text;
  std::ofstream(stem.string() + ".json") << rep.data.dump(2) << "\n";
}

void snapshot(const fs::path& run_dir, const std::vector<std::string>& args) {
  if (run_dir.empty()) return;
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "command.txt");
  for (std::size_t i = 0; i < args.size(); ++i) out << (i ? " " : "") << args[i];
  out << "\n";
}

ConfigMap load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ConfigMap map;
  if (!path.empty()) map = ConfigMap::load(path);
  map.apply(overrides);
  return map;
}

Report diagnostics_report(const DiagnosticsBundle& d) {
  Report rep;
  std::ostringstream out;
  for (std::size_t s = 0; s < d.beta_mass.size(); ++s) {
    for (const auto& [tag, m] : d.beta_mass[s]) {
      out << "beta.step" << s << ".mass." << tag << "=" << fmt(m) << "\n";
      rep.data["beta_mass"][s][tag] = m;
    }
    for (const auto& [tag, m] : d.beta_mean[s]) {
      out << "beta.step" << s << ".mean." << tag << "=" << fmt(m) << "\n";
      rep.data["beta_mean"][s][tag] = m;
    }
  }
  for (std::size_t s = 0; s < d.wasserstein.size(); ++s) {
    out << "wasserstein.pass" << s << "=" << fmt(d.wasserstein[s]) << "\n";
    rep.data["wasserstein"].push_back(d.wasserstein[s]);
  }
  rep.text = out.str();
  return rep;
}

int category_exit(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return kExitUsage;
    case ErrorCategory::kData: return kExitData;
    case ErrorCategory::kFormat: return kExitFormat;
    case ErrorCategory::kDomain: return kExitDomain;
    case ErrorCategory::kShape: return kExitShape;
    case ErrorCategory::kAdapter: return kExitAdapter;
    case ErrorCategory::kTraining: return kExitTraining;
  }
  return kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Region-word matching with regulated attention"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset");
  SyntheticSpec spec;
  std::size_t test_pairs = 0;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--pairs", spec.num_pairs, "Training pairs");
  gen->add_option("--test-pairs", test_pairs, "Extra held-out pairs written to <out>/test");
  gen->add_option("--regions", spec.num_regions, "Regions per image (K)");
  gen->add_option("--words", spec.num_words, "Words per caption (L)");
  gen->add_option("--raw-dim", spec.raw_dim, "Raw region feature size");
  gen->add_option("--concepts", spec.latent_concept_count, "Latent concept count");
  gen->add_option("--noise", spec.noise_scale, "Noise scale");
  gen->add_option("--seed", spec.seed, "Seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_config, tr_data, tr_val, tr_run;
  std::vector<std::string> tr_set;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--data", tr_data, "Training dataset directory")->required();
  tr->add_option("--val", tr_val, "Validation dataset directory");
  tr->add_option("--run-dir", tr_run, "Run directory")->required();
  tr->add_option("--set", tr_set, "Config override key=value");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate scores or a checkpoint");
  std::string ev_scores, ev_manifest, ev_checkpoint, ev_data, ev_run, ev_ks = "1,5,10", ev_out;
  std::size_t ev_folds = 0, ev_block = 64;
  bool ev_diag = false;
  ev->add_option("--scores", ev_scores, "Scores TSV");
  ev->add_option("--manifest", ev_manifest, "Manifest of the scored split");
  ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint to score --data with");
  ev->add_option("--data", ev_data, "Dataset directory");
  ev->add_option("--run-dir", ev_run, "Run directory");
  ev->add_option("--out", ev_out, "Report path stem");
  ev->add_option("--ks", ev_ks, "Comma-separated k values");
  ev->add_option("--folds", ev_folds, "Fold count (0: full split only)");
  ev->add_option("--block", ev_block, "Scoring block size");
  ev->add_flag("--diagnostics", ev_diag, "Also export attention diagnostics");

  // ensemble
  auto* en = app.add_subcommand("ensemble", "Average two score files");
  std::vector<std::string> en_in;
  std::string en_out, en_run;
  en->add_option("--in", en_in, "Two score files a.tsv,b.tsv")->required()->delimiter(',')->expected(2);
  en->add_option("--out", en_out, "Output TSV")->required();
  en->add_option("--run-dir", en_run, "Run directory");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient audit");
  GradCheckSpec gspec;
  std::string gc_run;
  gc->add_option("--fragment", gspec.fragment, "Fragment name or 'all'");
  gc->add_option("--probes", gspec.probes, "Probes per fragment");
  gc->add_option("--seed", gspec.seed, "Seed");
  gc->add_option("--step", gspec.step, "Central difference step");
  gc->add_option("--tolerance", gspec.tolerance, "Max relative error");
  gc->add_option("--order", gspec.order, "Stencil points (2 or 4)");
  gc->add_option("--error-floor", gspec.error_floor, "Denominator floor of the relative error");
  gc->add_option("--corrupt", gspec.corrupt_param, "Scale this parameter's analytic gradient");
  gc->add_option("--run-dir", gc_run, "Run directory");

  // inspect
  auto* in = app.add_subcommand("inspect", "Describe a checkpoint, dataset or feature file");
  std::string in_checkpoint, in_data, in_features;
  in->add_option("--checkpoint", in_checkpoint, "Checkpoint");
  in->add_option("--data", in_data, "Dataset directory");
  in->add_option("--features", in_features, "Feature file");

  std::vector<std::string> argv_copy = args;
  std::vector<char*> argv;
  for (auto& a : argv_copy) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      spec.num_pairs += test_pairs;
      spec.validate();
      const SyntheticData all = generate_synthetic(spec);
      if (test_pairs == 0) {
        all.data.save(gen_out);
      } else {
        const std::size_t n = spec.num_pairs - test_pairs;
        all.subset(0, n, "train").data.save(fs::path(gen_out) / "train");
        all.subset(n, spec.num_pairs, "test").data.save(fs::path(gen_out) / "test");
      }
      out << "wrote " << spec.num_pairs << " pairs to " << gen_out << "\n";
      return kExitOk;
    }
    if (tr->parsed()) {
      ConfigMap map = load_config(tr_config, tr_set);
      TrainConfig config = TrainConfig::from_map(map);
      config.run_dir = tr_run;
      const Dataset train_data = Dataset::load(tr_data);
      std::optional<Dataset> val;
      if (!tr_val.empty()) val = Dataset::load(tr_val);
      snapshot(tr_run, args);
      std::ofstream log(fs::path(tr_run) / "train.log");
      const auto start = std::chrono::steady_clock::now();
      const TrainResult result = train(config, train_data, val ? &*val : nullptr, &log);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out << "initial_loss=" << fmt(result.initial_loss) << "\n";
      if (!result.epochs.empty()) out << "final_loss=" << fmt(result.epochs.back().mean_loss) << "\n";
      out << "best_epoch=" << result.best_epoch << "\nseconds=" << fmt(seconds) << "\n";
      return kExitOk;
    }
    if (ev->parsed()) {
      const std::vector<std::size_t> ks = parse_ks(ev_ks);
      fs::path stem = ev_out;
      Tensor scores;
      std::vector<std::size_t> caption_image;
      std::optional<Report> diag;
      if (!ev_scores.empty()) {
        if (ev_manifest.empty()) throw ConfigError("--scores needs --manifest");
        const DatasetManifest manifest = DatasetManifest::load(ev_manifest);
        const auto records = read_scores(ev_scores);
        scores = score_matrix(records, manifest);
        caption_image = caption_image_index(manifest);
        if (stem.empty()) {
          stem = ev_run.empty() ? fs::path(fs::path(ev_scores).replace_extension("").string() + ".report")
                                : fs::path(ev_run) / "report";
        }
      } else if (!ev_checkpoint.empty()) {
        if (ev_data.empty()) throw ConfigError("--checkpoint needs --data");
        if (ev_run.empty()) throw ConfigError("--checkpoint needs --run-dir");
        const Checkpoint ck = Checkpoint::load(ev_checkpoint);
        const MatchingModel model = model_from_checkpoint(ck);
        const Dataset data = Dataset::load(ev_data);
        if (data.vocabulary.size() != model.vocab_size()) {
          throw DataError("dataset vocabulary does not match the checkpoint");
        }
        scores = model.score_dataset(data, ev_block);
        caption_image = data.caption_image_index();
        snapshot(ev_run, args);
        ck.meta.save(fs::path(ev_run) / "config.txt");
        const auto records = score_records(data, scores, model.config());
        write_scores(fs::path(ev_run) / "scores.tsv", records);
        if (ev_diag) diag = diagnostics_report(diagnostics(collect_diagnostics(model, data)));
        if (stem.empty()) stem = fs::path(ev_run) / "report";
      } else {
        throw ConfigError("eval needs --scores or --checkpoint");
      }
      if (!ev_run.empty()) snapshot(ev_run, args);
      const Report rep = retrieval_report(scores, caption_image, ks, ev_folds);
      out << rep.text;
      write_report(rep, stem);
      if (diag) {
        out << diag->text;
        write_report(*diag, fs::path(ev_run) / "diagnostics");
      }
      return kExitOk;
    }
    if (en->parsed()) {
      const auto a = read_scores(en_in.at(0));
      const auto b = read_scores(en_in.at(1));
      const auto merged = ensemble(a, b);
      write_scores(en_out, merged);
      snapshot(en_run, args);
      out << "wrote " << merged.size() << " records to " << en_out << "\n";
      return kExitOk;
    }
    if (gc->parsed()) {
      std::vector<std::string> fragments;
      if (gspec.fragment == "all") fragments = grad_check_fragments();
      else fragments.push_back(gspec.fragment);
      snapshot(gc_run, args);
      bool ok = true;
      std::string text;
      for (const auto& f : fragments) {
        GradCheckSpec s = gspec;
        s.fragment = f;
        if (!s.corrupt_param.empty() && fragments.size() > 1) s.corrupt_param.clear();
        const GradCheckReport r = grad_check(s);
        text += r.str();
        ok = ok && r.passed;
        if (!r.passed) text += "FAILED " + f + ": worst parameter " + r.worst_param + "\n";
      }
      out << text;
      if (!gc_run.empty()) std::ofstream(fs::path(gc_run) / "grad_check.txt") << text;
      return ok ? kExitOk : kExitGradCheck;
    }
    if (in->parsed()) {
      if (!in_checkpoint.empty()) {
        const Checkpoint ck = Checkpoint::load(in_checkpoint);
        for (const auto& [k, v] : ck.meta.values()) {
          if (k == "vocabulary") {
            out << "vocabulary_size=" << vocabulary_from_checkpoint(ck).size() << "\n";
          } else {
            out << k << "=" << v << "\n";
          }
        }
        for (const auto& [name, var] : ck.params.entries()) {
          out << "tensor " << name << " " << var.shape().str() << "\n";
        }
        out << "parameters=" << ck.params.scalar_count() << "\n";
      } else if (!in_data.empty()) {
        const Dataset d = Dataset::load(in_data);
        out << "split=" << d.manifest.split << "\nimages=" << d.regions.size()
            << "\ncaptions=" << d.sentences.size() << "\nvocabulary=" << d.vocabulary.size() << "\n";
        if (!d.regions.empty()) {
          out << "regions=" << d.regions[0].num_regions() << "\nraw_dim=" << d.regions[0].raw_dim() << "\n";
        }
      } else if (!in_features.empty()) {
        FeatureReader reader(in_features);
        const auto& h = reader.header();
        out << "version=" << h.version << "\ncount=" << h.count << "\nregions=" << h.num_regions
            << "\nraw_dim=" << h.raw_dim << "\n";
        std::size_t n = 0;
        while (reader.next()) ++n;
        out << "records_ok=" << n << "\n";
      } else {
        throw ConfigError("inspect needs --checkpoint, --data or --features");
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error [" << category_name(e.category()) << "]: " << e.what() << "\n";
    return category_exit(e.category());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace regmatch
