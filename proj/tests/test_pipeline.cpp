#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "regmatch/errors.hpp"
#include "regmatch/pipeline.hpp"

using namespace regmatch;
using fixture::PairBatch;
using fixture::Pipeline;
using oracle::Mat;

namespace {

constexpr std::size_t kDim = 6, kAlign = 4;

// The head applied to the mean alignment of plain attention.
std::vector<double> mean_alignment_head(const Pipeline& p, const PairBatch& pairs, Direction dir) {
  ag::NoGradGuard no_grad;
  auto f = pairs.features(dir);
  auto attended = attend(f.queries, f.keys, FactorState::initial(p.config.lambda0), f.masks()).attended;
  auto a = build_alignment(f.queries, attended, p.regulators.alignment);
  auto g = init_guidance(a, f.masks().queries);
  auto s = similarity_head(g.guidance, p.regulators.rar).value();
  return {s.values().begin(), s.values().end()};
}

void expect_same(const std::vector<double>& a, const std::vector<double>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << "pair " << i;
}

}  // namespace

TEST(Baseline, MatchesOracle) {
  std::mt19937_64 rng(1);
  auto pairs = fixture::random_pairs(rng, 6, 4, 5, kDim, true);
  Pipeline p(fixture::small_config(Mode::kBaseline, 0, kDim, kAlign), 2);
  auto got = p.scores(pairs, Direction::kT2I);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Mat w = pairs.valid_words(i);
    Mat e(w.size(), oracle::Vec(kDim, 1.0));
    auto att = oracle::attend(w, pairs.regions[i], e, oracle::Vec(w.size(), 10.0), w.size());
    EXPECT_NEAR(got[i], oracle::mean_cosine(w, att.attended, w.size()), 1e-12);
  }
}

TEST(Baseline, TrivialScores) {
  Pipeline p(fixture::small_config(Mode::kBaseline, 0, 2, 2), 3);
  PairBatch same{{{{0.3, 0.4}}}, {{{0.3, 0.4}}}, {1}};
  EXPECT_NEAR(p.scores(same, Direction::kT2I)[0], 1.0, 1e-15);
  PairBatch ortho{{{{1.0, 0.0}}}, {{{0.0, 2.0}}}, {1}};
  EXPECT_EQ(p.scores(ortho, Direction::kT2I)[0], 0.0);
}

TEST(Rcar, MatchesComposedOracle) {
  std::mt19937_64 rng(4);
  auto pairs = fixture::random_pairs(rng, 5, 3, 4, kDim, true);
  for (std::size_t steps : {1, 2, 3}) {
    for (bool every : {false, true}) {
      auto config = fixture::small_config(Mode::kRcar, steps, kDim, kAlign);
      config.rcr_every_step = every;
      Pipeline p(config, 10 + steps);
      auto got = p.scores(pairs, Direction::kT2I);
      oracle::Schedule s{config.n_rar, config.n_rcr, every, true, config.lambda0};
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        double ref = oracle::rcar(pairs.valid_words(i), pairs.regions[i], s,
                                  p.regulators.alignment.projection, p.regulators.rcr[0],
                                  p.regulators.rar);
        EXPECT_NEAR(got[i], ref, 1e-12) << "steps " << steps << " pair " << i;
      }
    }
  }
}

TEST(Rcar, ImageToTextMatchesComposedOracle) {
  std::mt19937_64 rng(5);
  auto pairs = fixture::random_pairs(rng, 4, 3, 4, kDim, false);
  auto config = fixture::small_config(Mode::kRcar, 2, kDim, kAlign);
  Pipeline p(config, 6);
  auto got = p.scores(pairs, Direction::kI2T);
  oracle::Schedule s{2, 1, false, true, config.lambda0};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double ref = oracle::rcar(pairs.regions[i], pairs.words[i], s, p.regulators.alignment.projection,
                              p.regulators.rcr[0], p.regulators.rar);
    EXPECT_NEAR(got[i], ref, 1e-12);
  }
}

TEST(Rcar, IdentityCascadeIsExact) {
  std::mt19937_64 rng(7);
  auto pairs = fixture::random_pairs(rng, 8, 4, 5, kDim, true);
  for (std::size_t steps : {1, 2, 3}) {
    Pipeline p(fixture::small_config(Mode::kRcar, steps, kDim, kAlign), 20 + steps);
    p.regulators.rcr[0].zero();
    p.regulators.rar.scorer.weight.mutable_value().fill(0.0);
    for (auto dir : {Direction::kT2I, Direction::kI2T})
      expect_same(p.scores(pairs, dir), mean_alignment_head(p, pairs, dir));
  }
}

TEST(Rcar, ModeDegeneracyIsExact) {
  std::mt19937_64 rng(8);
  auto pairs = fixture::random_pairs(rng, 8, 4, 5, kDim, true);
  for (std::size_t n : {1, 2, 3}) {
    auto config = fixture::small_config(Mode::kRcar, 2, kDim, kAlign);
    Pipeline p(config, 30 + n);
    for (auto dir : {Direction::kT2I, Direction::kI2T}) {
      Pipeline rcar = p;
      rcar.config.n_rcr = 0;
      rcar.config.n_rar = n;
      Pipeline rar = p;
      rar.config = fixture::small_config(Mode::kRar, n, kDim, kAlign);
      expect_same(rcar.scores(pairs, dir), rar.scores(pairs, dir));

      rcar.config.n_rcr = n;
      rcar.config.n_rar = 0;
      rcar.config.rcar_head = ScoreHead::kMeanCosine;
      Pipeline rcr = p;
      rcr.config = fixture::small_config(Mode::kRcr, n, kDim, kAlign);
      expect_same(rcar.scores(pairs, dir), rcr.scores(pairs, dir));
    }
  }
}

TEST(Pipeline, BatchInvariance) {
  std::mt19937_64 rng(9);
  auto pairs = fixture::random_pairs(rng, 6, 3, 5, kDim, true);
  for (auto mode : {Mode::kBaseline, Mode::kRcr, Mode::kRar, Mode::kRcar}) {
    Pipeline p(fixture::small_config(mode, 2, kDim, kAlign), 40);
    for (auto dir : {Direction::kT2I, Direction::kI2T}) {
      auto batched = p.scores(pairs, dir);
      for (std::size_t i = 0; i < pairs.size(); ++i)
        EXPECT_NEAR(batched[i], p.score(pairs, i, dir), 1e-12) << to_string(mode);
    }
  }
}

TEST(Pipeline, ScoreRanges) {
  std::mt19937_64 rng(10);
  auto pairs = fixture::random_pairs(rng, 10, 3, 4, kDim, true);
  for (auto mode : {Mode::kBaseline, Mode::kRcr, Mode::kRar, Mode::kRcar}) {
    Pipeline p(fixture::small_config(mode, 2, kDim, kAlign), 41);
    const bool sigmoid = mode == Mode::kRar || mode == Mode::kRcar;
    for (double s : p.scores(pairs, Direction::kT2I)) {
      EXPECT_GE(s, sigmoid ? 0.0 : -1.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(Adapter, SelfHostingIsBitIdentical) {
  std::mt19937_64 rng(11);
  auto pairs = fixture::random_pairs(rng, 5, 3, 4, kDim, true);
  Pipeline p(fixture::small_config(Mode::kRcar, 2, kDim, kAlign), 42);
  auto f = pairs.features(Direction::kT2I);
  auto scorer = host_foreign_unit(builtin_attention(), p.config, p.regulators);
  ag::NoGradGuard no_grad;
  EXPECT_EQ(max_abs_diff(scorer(f).value(),
                         score_rcar(f, p.config, p.regulators, builtin_attention()).value()),
            0.0);
}

TEST(Adapter, FactorBlindAdapterMakesRcrNoOp) {
  std::mt19937_64 rng(12);
  auto pairs = fixture::random_pairs(rng, 5, 3, 4, kDim, false);
  InteractionAdapter blind = [](const ag::Var& q, const ag::Var& k, const FactorState&,
                                const AttentionMasks& m) {
    return attend(q, k, FactorState::initial(10.0), m).attended;
  };
  Pipeline p(fixture::small_config(Mode::kRcar, 2, kDim, kAlign), 43);
  auto f = pairs.features(Direction::kT2I);
  PipelineTrace trace;
  ag::NoGradGuard no_grad;
  auto hosted = host_foreign_unit(blind, p.config, p.regulators)(f, &trace).value();
  auto rar_config = p.config;
  rar_config.n_rcr = 0;
  auto without = score_rcar(f, rar_config, p.regulators, blind).value();
  EXPECT_EQ(max_abs_diff(hosted, without), 0.0);
  ASSERT_EQ(trace.query_cosines.size(), 2u);
  EXPECT_EQ(max_abs_diff(trace.query_cosines[0], trace.query_cosines[1]), 0.0);
  EXPECT_EQ(trace.betas.size(), 3u);
}

TEST(Adapter, BadOutputIsAdapterError) {
  std::mt19937_64 rng(13);
  auto pairs = fixture::random_pairs(rng, 2, 3, 4, kDim, false);
  Pipeline p(fixture::small_config(Mode::kRcar, 2, kDim, kAlign), 44);
  auto f = pairs.features(Direction::kT2I);
  int calls = 0;
  InteractionAdapter nan_later = [&](const ag::Var& q, const ag::Var& k, const FactorState& fs,
                                     const AttentionMasks& m) {
    auto out = attend(q, k, fs, m).attended;
    if (calls++ == 1) {
      Tensor bad = out.value();
      bad.data()[0] = std::nan("");
      return ag::Var::constant(bad);
    }
    return out;
  };
  try {
    host_foreign_unit(nan_later, p.config, p.regulators)(f);
    FAIL() << "expected AdapterError";
  } catch (const AdapterError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
  InteractionAdapter wrong_shape = [](const ag::Var& q, const ag::Var&, const FactorState&,
                                      const AttentionMasks&) { return ag::slice(q, 1, 0, 1); };
  EXPECT_THROW(host_foreign_unit(wrong_shape, p.config, p.regulators)(f), AdapterError);
  EXPECT_THROW(host_foreign_unit(InteractionAdapter{}, p.config, p.regulators), ConfigError);
}

TEST(Config, MakeValidateAndRoundTrip) {
  auto c = PipelineConfig::make(Mode::kRcar, Direction::kI2T, 3);
  EXPECT_EQ(c.n_rar, 3u);
  EXPECT_EQ(c.n_rcr, 2u);
  EXPECT_EQ(PipelineConfig::make(Mode::kRcr, Direction::kT2I, 2).n_rcr, 2u);
  EXPECT_EQ(PipelineConfig::make(Mode::kBaseline, Direction::kT2I, 2).n_rar, 0u);
  c.lambda0 = 4.5;
  c.share_alignment = false;
  auto back = PipelineConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map().values(), c.to_map().values());

  auto bad = PipelineConfig::make(Mode::kBaseline, Direction::kT2I, 0);
  bad.n_rar = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = PipelineConfig::make(Mode::kRar, Direction::kT2I, 1);
  bad.rcar_head = ScoreHead::kMeanCosine;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.rcar_head = ScoreHead::kSigmoid;
  bad.lambda0 = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_mode("fancy"), ConfigError);
}

TEST(Ensemble, MeansAndErrors) {
  std::vector<SimilarityRecord> a{{"i0", "c0", "t2i", "rcar", 0.2}, {"i0", "c1", "t2i", "rcar", 0.7}};
  std::vector<SimilarityRecord> b{{"i0", "c1", "i2t", "rcar", 0.1}, {"i0", "c0", "i2t", "rcar", 0.8}};
  auto e = ensemble(a, b);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].score, 0.5);
  EXPECT_EQ(e[1].score, (0.7 + 0.1) / 2.0);
  EXPECT_EQ(e[0].direction, "ensemble");
  EXPECT_EQ(e[0].mode, "rcar");
  auto same = ensemble(a, a);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(same[i].score, a[i].score);
  b[0].caption_id = "c9";
  EXPECT_THROW(ensemble(a, b), DataError);
  b.pop_back();
  EXPECT_THROW(ensemble(a, b), DataError);
}

TEST(Scores, FormatAndRoundTrip) {
  EXPECT_EQ(format_score(0.5), "0.5");
  EXPECT_EQ(format_score(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(format_score(-0.125), "-0.125");
  auto dir = std::filesystem::temp_directory_path() / "regmatch_scores_test";
  std::filesystem::create_directories(dir);
  std::vector<SimilarityRecord> recs{{"i0", "c0", "t2i", "rcar", 0.123456789123},
                                     {"i1", "c1", "t2i", "rcar", -0.5}};
  write_scores(dir / "s.tsv", recs);
  auto back = read_scores(dir / "s.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].image_id, "i0");
  EXPECT_EQ(format_score(back[0].score), format_score(recs[0].score));
  EXPECT_EQ(back[1].score, -0.5);
}

TEST(Model, MatrixMatchesPairwiseAndDataset) {
  SyntheticSpec spec;
  spec.num_pairs = 6;
  spec.num_regions = 3;
  spec.num_words = 4;
  spec.raw_dim = 8;
  spec.latent_concept_count = 6;
  auto syn = generate_synthetic(spec);
  for (auto mode : {Mode::kBaseline, Mode::kRcar}) {
    auto config = fixture::small_config(mode, 2, kDim, kAlign);
    auto model = MatchingModel::create(config, syn.data.vocabulary.size(), 8, 5);
    std::vector<const RegionSet*> images;
    std::vector<const SentenceSet*> caps;
    for (auto& r : syn.data.regions) images.push_back(&r);
    for (auto& s : syn.data.sentences) caps.push_back(&s);
    ag::NoGradGuard no_grad;
    auto v = model.encode_images(images);
    auto t = model.encode_texts(caps);
    auto sim = model.similarity_matrix(v, t).value();
    ASSERT_EQ(sim.rows(), 6u);
    ASSERT_EQ(sim.cols(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t c = 0; c < 6; ++c) {
        std::size_t ii[] = {i}, cc[] = {c};
        auto one = model.score_pairs(v, t, ii, cc).value();
        EXPECT_NEAR(one.item(), sim.at(i, c), 1e-12);
      }
    }
    auto full = model.score_dataset(syn.data, 4);
    EXPECT_LT(max_abs_diff(full, sim.reshaped(Shape{1, 6, 6})), 1e-12);

    auto copy = model.clone();
    for (auto& [name, var] : copy.params().entries()) var.mutable_value().fill(0.0);
    EXPECT_EQ(max_abs_diff(model.score_dataset(syn.data, 4), full), 0.0);
    auto rebound = MatchingModel::from_params(config, model.params().clone());
    EXPECT_EQ(max_abs_diff(rebound.score_dataset(syn.data, 4), full), 0.0);
  }
}
