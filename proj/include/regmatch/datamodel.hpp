#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "regmatch/tensor.hpp"

namespace regmatch {

// K region features of one image, [1 x K x d_raw].
struct RegionSet {
  std::string image_id;
  Tensor features;

  // Checks K >= 1, finiteness and that no row is all zero.
  static RegionSet make(std::string image_id, Tensor features);

  std::size_t num_regions() const { return features.rows(); }
  std::size_t raw_dim() const { return features.cols(); }
};

// Token ids include the <start>/<end> sentinels added by the tokenizer.
struct SentenceSet {
  std::string caption_id;
  std::string image_id;
  std::vector<std::size_t> token_ids;
  std::vector<std::string> token_tags;  // empty, or one tag per token

  std::size_t length() const { return token_ids.size(); }
};

class Vocabulary {
 public:
  static constexpr std::size_t kStart = 0;
  static constexpr std::size_t kEnd = 1;
  static constexpr std::size_t kUnknown = 2;

  Vocabulary();

  std::size_t add(const std::string& word);
  std::optional<std::size_t> find(const std::string& word) const;
  const std::string& word(std::size_t id) const { return words_.at(id); }
  std::size_t size() const { return words_.size(); }

  // Whitespace split + ASCII lowercase, wrapped in sentinels. Unknown words
  // map to <unk> unless `grow` is set.
  std::vector<std::size_t> tokenize(const std::string& text, bool grow = false);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DatasetManifest {
  std::string split;
  std::size_t captions_per_image = 5;
  std::vector<std::pair<std::string, std::string>> pairs;  // (image_id, caption_id)

  // Every caption maps to exactly one image.
  void validate() const;
  const std::string& image_of(const std::string& caption_id) const;
  // Distinct image ids in first-appearance order; this is the record order of
  // the matching feature file.
  std::vector<std::string> images() const;
  std::vector<std::string> captions() const;

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

// ---- binary feature file ----

struct FeatureHeader {
  std::uint32_t version = 1;
  std::uint32_t count = 0;
  std::uint32_t num_regions = 0;
  std::uint32_t raw_dim = 0;
};

class FeatureReader {
 public:
  explicit FeatureReader(const std::filesystem::path& path);

  const FeatureHeader& header() const { return header_; }
  // Next record, or nullopt after `count` records. Record ids default to the
  // record index.
  std::optional<RegionSet> next();

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  FeatureHeader header_;
  std::uint32_t read_ = 0;
};

std::vector<RegionSet> load_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, std::span<const RegionSet> records);

// ---- captions ----

// One caption per line: caption_id \t image_id \t text [\t tags].
std::vector<SentenceSet> load_captions(const std::filesystem::path& path, Vocabulary& vocab,
                                       bool grow_vocabulary);
void write_captions(const std::filesystem::path& path, std::span<const SentenceSet> sentences,
                    const Vocabulary& vocab);

// ---- synthetic data ----

struct SyntheticSpec {
  std::size_t num_pairs = 64;
  std::size_t num_regions = 8;   // K
  std::size_t num_words = 6;     // L, before sentinels
  std::size_t raw_dim = 64;      // d_raw
  std::size_t latent_concept_count = 16;
  double noise_scale = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
  std::size_t concepts_per_pair() const;
};

struct Dataset {
  std::vector<RegionSet> regions;      // manifest image order
  std::vector<SentenceSet> sentences;  // manifest caption order
  DatasetManifest manifest;
  Vocabulary vocabulary;

  // Image index of each sentence, into `regions`.
  std::vector<std::size_t> caption_image_index() const;
  void save(const std::filesystem::path& dir) const;
  static Dataset load(const std::filesystem::path& dir);
};

struct SyntheticData {
  Dataset data;
  std::vector<std::vector<std::size_t>> concepts;  // per pair, sorted

  // Pairs [begin, end) as a standalone dataset.
  SyntheticData subset(std::size_t begin, std::size_t end, const std::string& split) const;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace regmatch
