#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "regmatch/datamodel.hpp"
#include "regmatch/errors.hpp"

namespace fs = std::filesystem;
using namespace regmatch;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("regmatch_dm_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

}  // namespace

TEST(RegionSet, RejectsBadFeatures) {
  EXPECT_THROW(RegionSet::make("a", Tensor::matrix(0, 3)), DataError);
  auto zero_row = Tensor::from_rows({{1, 2}, {0, 0}});
  EXPECT_THROW(RegionSet::make("a", zero_row), DataError);
  auto nan = Tensor::from_rows({{1, std::nan("")}});
  EXPECT_THROW(RegionSet::make("a", nan), DataError);
  auto ok = RegionSet::make("a", Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}}));
  EXPECT_EQ(ok.num_regions(), 3u);
  EXPECT_EQ(ok.raw_dim(), 2u);
}

TEST(Vocabulary, TokenizeWrapsAndLowercases) {
  Vocabulary v;
  EXPECT_EQ(v.size(), 3u);
  auto ids = v.tokenize("A Dog  runs", true);
  ASSERT_EQ(ids.size(), 5u);
  EXPECT_EQ(ids.front(), Vocabulary::kStart);
  EXPECT_EQ(ids.back(), Vocabulary::kEnd);
  EXPECT_EQ(v.word(ids[2]), "dog");
  auto again = v.tokenize("a cat", false);
  EXPECT_EQ(again[1], ids[1]);
  EXPECT_EQ(again[2], Vocabulary::kUnknown);
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  auto dir = scratch("vocab");
  Vocabulary v;
  v.tokenize("red blue green", true);
  v.save(dir / "v.txt");
  auto w = Vocabulary::load(dir / "v.txt");
  ASSERT_EQ(w.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(w.word(i), v.word(i));
  write_text(dir / "bad.txt", "red\nblue\n");
  EXPECT_THROW(Vocabulary::load(dir / "bad.txt"), FormatError);
}

TEST(Manifest, ValidateCountsAndDuplicates) {
  DatasetManifest m;
  m.captions_per_image = 2;
  m.pairs = {{"i0", "c0"}, {"i0", "c1"}, {"i1", "c2"}, {"i1", "c3"}};
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.image_of("c2"), "i1");
  EXPECT_THROW(m.image_of("zz"), DataError);
  EXPECT_EQ(m.images(), (std::vector<std::string>{"i0", "i1"}));
  m.pairs.push_back({"i1", "c0"});
  EXPECT_THROW(m.validate(), DataError);
  m.pairs.pop_back();
  m.pairs.push_back({"i2", "c9"});
  EXPECT_THROW(m.validate(), DataError);
}

TEST(Manifest, LoadRejectsMalformedLines) {
  auto dir = scratch("manifest");
  write_text(dir / "a.txt", "split=x\ncaptions_per_image=1\npair=i0\tc0\n");
  auto m = DatasetManifest::load(dir / "a.txt");
  EXPECT_EQ(m.split, "x");
  ASSERT_EQ(m.pairs.size(), 1u);
  write_text(dir / "b.txt", "split=x\nbogus\n");
  EXPECT_THROW(DatasetManifest::load(dir / "b.txt"), FormatError);
  write_text(dir / "c.txt", "colour=red\n");
  EXPECT_THROW(DatasetManifest::load(dir / "c.txt"), FormatError);
  EXPECT_THROW(DatasetManifest::load(dir / "missing.txt"), DataError);
}

TEST(Features, RoundTripIsFloatExact) {
  auto dir = scratch("features");
  std::vector<RegionSet> recs;
  recs.push_back(RegionSet::make("a", Tensor::from_rows({{0.1, -2.5}, {3.0, 1e-3}})));
  recs.push_back(RegionSet::make("b", Tensor::from_rows({{1, 2}, {3, 4}})));
  write_features(dir / "f.xmrf", recs);
  auto back = load_features(dir / "f.xmrf");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].image_id, "0");
  EXPECT_EQ(back[1].image_id, "1");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_EQ(back[i].features.data()[j], double(float(recs[i].features.data()[j])));
}

TEST(Features, StreamingReaderAndErrors) {
  auto dir = scratch("features_err");
  std::vector<RegionSet> recs{RegionSet::make("a", Tensor::from_rows({{1, 2, 3}})),
                              RegionSet::make("b", Tensor::from_rows({{4, 5, 6}}))};
  write_features(dir / "f.xmrf", recs);
  FeatureReader reader(dir / "f.xmrf");
  EXPECT_EQ(reader.header().count, 2u);
  EXPECT_EQ(reader.header().num_regions, 1u);
  EXPECT_EQ(reader.header().raw_dim, 3u);
  EXPECT_TRUE(reader.next().has_value());
  EXPECT_TRUE(reader.next().has_value());
  EXPECT_FALSE(reader.next().has_value());

  auto size = fs::file_size(dir / "f.xmrf");
  fs::copy_file(dir / "f.xmrf", dir / "t.xmrf");
  fs::resize_file(dir / "t.xmrf", size - 4);
  EXPECT_THROW(load_features(dir / "t.xmrf"), FormatError);

  write_text(dir / "magic.xmrf", "NOPE0000000000000000");
  EXPECT_THROW(load_features(dir / "magic.xmrf"), FormatError);

  std::vector<RegionSet> mixed{recs[0], RegionSet::make("c", Tensor::from_rows({{1, 2}}))};
  EXPECT_THROW(write_features(dir / "m.xmrf", mixed), DataError);
}

TEST(Captions, TagsMustMatchWordCount) {
  auto dir = scratch("captions");
  write_text(dir / "ok.tsv", "c0\ti0\ta red ball\tDET ADJ NOUN\nc1\ti1\tthe sky\n");
  Vocabulary v;
  auto s = load_captions(dir / "ok.tsv", v, true);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].length(), 5u);
  EXPECT_EQ(s[0].token_tags[2], "ADJ");
  EXPECT_TRUE(s[1].token_tags.empty());
  write_text(dir / "bad.tsv", "c0\ti0\ta red ball\tDET NOUN\n");
  EXPECT_THROW(load_captions(dir / "bad.tsv", v, true), DataError);
  write_text(dir / "short.tsv", "c0\ti0\n");
  EXPECT_THROW(load_captions(dir / "short.tsv", v, true), FormatError);
}

TEST(Synthetic, DeterministicAndValid) {
  SyntheticSpec spec;
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  ASSERT_EQ(a.data.regions.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(max_abs_diff(a.data.regions[i].features, b.data.regions[i].features), 0.0);
    EXPECT_EQ(a.data.sentences[i].token_ids, b.data.sentences[i].token_ids);
    EXPECT_EQ(a.data.regions[i].num_regions(), 8u);
    EXPECT_EQ(a.data.sentences[i].length(), 6u + 2u);
  }
  std::set<std::vector<std::size_t>> distinct(a.concepts.begin(), a.concepts.end());
  EXPECT_EQ(distinct.size(), 64u);
  EXPECT_NO_THROW(a.data.manifest.validate());

  spec.seed = 8;
  auto c = generate_synthetic(spec);
  EXPECT_GT(max_abs_diff(a.data.regions[0].features, c.data.regions[0].features), 0.0);
}

TEST(Synthetic, CapacityChecks) {
  SyntheticSpec spec;
  spec.latent_concept_count = 65;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec.latent_concept_count = 4;  // C(4,3) = 4 < 64
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = SyntheticSpec{};
  spec.noise_scale = -1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  auto dir = scratch("dataset");
  SyntheticSpec spec;
  spec.num_pairs = 10;
  auto syn = generate_synthetic(spec);
  syn.data.save(dir);
  auto back = Dataset::load(dir);
  ASSERT_EQ(back.regions.size(), 10u);
  ASSERT_EQ(back.sentences.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(back.regions[i].image_id, syn.data.regions[i].image_id);
    EXPECT_EQ(back.sentences[i].token_ids, syn.data.sentences[i].token_ids);
    EXPECT_EQ(back.sentences[i].token_tags, syn.data.sentences[i].token_tags);
  }
  EXPECT_EQ(back.caption_image_index(), syn.data.caption_image_index());

  auto sub = syn.subset(2, 5, "val");
  EXPECT_EQ(sub.data.regions.size(), 3u);
  EXPECT_EQ(sub.data.manifest.split, "val");
  EXPECT_THROW(syn.subset(5, 2, "x"), ConfigError);
}
