#include "regmatch/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "regmatch/errors.hpp"

namespace regmatch {
namespace {

constexpr char kFeatureMagic[4] = {'X', 'M', 'R', 'F'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  v = std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) | (std::uint32_t(bytes[2]) << 16) |
      (std::uint32_t(bytes[3]) << 24);
  return true;
}

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
float bits_float(std::uint32_t u) { return std::bit_cast<float>(u); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(s);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
  return r;
}

}  // namespace

RegionSet RegionSet::make(std::string image_id, Tensor features) {
  if (features.batch() != 1 || features.rows() == 0 || features.cols() == 0) {
    throw DataError("region set " + image_id + " must have K >= 1 rows, got " +
                    features.shape().str());
  }
  for (std::size_t r = 0; r < features.rows(); ++r) {
    bool nonzero = false;
    for (double v : features.row_span(0, r)) {
      if (!std::isfinite(v)) throw DataError("region set " + image_id + " has a non-finite entry");
      nonzero = nonzero || v != 0.0;
    }
    if (!nonzero) {
      throw DataError("region set " + image_id + " row " + std::to_string(r) + " is all zero");
    }
  }
  return RegionSet{std::move(image_id), std::move(features)};
}

// ---- vocabulary ----

Vocabulary::Vocabulary() {
  add("<start>");
  add("<end>");
  add("<unk>");
}

std::size_t Vocabulary::add(const std::string& word) {
  auto [it, inserted] = index_.emplace(word, words_.size());
  if (inserted) words_.push_back(word);
  return it->second;
}

std::optional<std::size_t> Vocabulary::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Vocabulary::tokenize(const std::string& text, bool grow) {
  std::vector<std::size_t> ids{kStart};
  for (const auto& w : words_of(text)) {
    const std::string key = lower(w);
    if (grow) ids.push_back(add(key));
    else ids.push_back(find(key).value_or(kUnknown));
  }
  ids.push_back(kEnd);
  return ids;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  Vocabulary v;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    line = trim_cr(line);
    if (line.empty()) continue;
    if (line_no < 3 && v.word(line_no) != line) {
      throw FormatError("vocabulary must start with <start>, <end>, <unk>");
    }
    v.add(line);
    ++line_no;
  }
  return v;
}

// ---- manifest ----

void DatasetManifest::validate() const {
  if (captions_per_image == 0) throw DataError("captions_per_image must be >= 1");
  std::unordered_map<std::string, std::string> seen;
  std::unordered_map<std::string, std::size_t> per_image;
  for (const auto& [image, caption] : pairs) {
    auto [it, inserted] = seen.emplace(caption, image);
    if (!inserted) throw DataError("caption " + caption + " appears more than once");
    ++per_image[image];
  }
  for (const auto& [image, n] : per_image) {
    if (n != captions_per_image) {
      throw DataError("image " + image + " has " + std::to_string(n) + " captions, expected " +
                      std::to_string(captions_per_image));
    }
  }
}

const std::string& DatasetManifest::image_of(const std::string& caption_id) const {
  for (const auto& [image, caption] : pairs)
    if (caption == caption_id) return image;
  throw DataError("caption " + caption_id + " not in manifest");
}

std::vector<std::string> DatasetManifest::images() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : pairs)
    if (seen.insert(p.first).second) out.push_back(p.first);
  return out;
}

std::vector<std::string> DatasetManifest::captions() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.second);
  return out;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "split=" << split << '\n' << "captions_per_image=" << captions_per_image << '\n';
  for (const auto& [image, caption] : pairs) out << "pair=" << image << '\t' << caption << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.pairs.clear();
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "split") {
      m.split = value;
    } else if (key == "captions_per_image") {
      try {
        m.captions_per_image = std::stoul(value);
      } catch (const std::exception&) {
        throw FormatError("bad captions_per_image: " + value);
      }
    } else if (key == "pair") {
      const auto fields = regmatch::split(value, '\t');
      if (fields.size() != 2) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": pair needs image_id<TAB>caption_id");
      }
      m.pairs.emplace_back(fields[0], fields[1]);
    } else {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  m.validate();
  return m;
}

// ---- features ----

FeatureReader::FeatureReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw DataError("cannot open feature file " + path.string());
  char magic[4];
  if (!in_.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic, expected XMRF");
  }
  if (!get_u32(in_, header_.version) || !get_u32(in_, header_.count) ||
      !get_u32(in_, header_.num_regions) || !get_u32(in_, header_.raw_dim)) {
    throw FormatError(path.string() + ": truncated header");
  }
  if (header_.version != 1) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(header_.version));
  }
  if (header_.count > 0 && (header_.num_regions == 0 || header_.raw_dim == 0)) {
    throw FormatError(path.string() + ": K and d_raw must be positive");
  }
}

std::optional<RegionSet> FeatureReader::next() {
  if (read_ >= header_.count) return std::nullopt;
  const std::size_t k = header_.num_regions;
  const std::size_t d = header_.raw_dim;
  std::vector<unsigned char> raw(k * d * 4);
  if (!in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError(path_.string() + ": truncated at record " + std::to_string(read_) +
                      " (expected " + std::to_string(k) + "x" + std::to_string(d) + " floats)");
  }
  Tensor features = Tensor::matrix(k, d);
  for (std::size_t i = 0; i < k * d; ++i) {
    const unsigned char* b = raw.data() + 4 * i;
    const std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                            (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    const float f = bits_float(u);
    if (!std::isfinite(f)) {
      throw DataError(path_.string() + ": non-finite value in record " + std::to_string(read_));
    }
    features.data()[i] = f;
  }
  const std::uint32_t index = read_++;
  try {
    return RegionSet::make(std::to_string(index), std::move(features));
  } catch (const DataError& e) {
    throw DataError(path_.string() + ": record " + std::to_string(index) + ": " + e.what());
  }
}

std::vector<RegionSet> load_features(const std::filesystem::path& path) {
  FeatureReader reader(path);
  std::vector<RegionSet> out;
  out.reserve(reader.header().count);
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

void write_features(const std::filesystem::path& path, std::span<const RegionSet> records) {
  std::uint32_t k = 0, d = 0;
  if (!records.empty()) {
    k = static_cast<std::uint32_t>(records[0].num_regions());
    d = static_cast<std::uint32_t>(records[0].raw_dim());
  }
  for (const auto& r : records) {
    if (r.num_regions() != k || r.raw_dim() != d) {
      throw DataError("feature file requires a fixed K x d_raw; record " + r.image_id + " is " +
                      r.features.shape().str());
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out.write(kFeatureMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  put_u32(out, k);
  put_u32(out, d);
  for (const auto& r : records)
    for (double v : r.features.values()) put_u32(out, float_bits(static_cast<float>(v)));
}

// ---- captions ----

std::vector<SentenceSet> load_captions(const std::filesystem::path& path, Vocabulary& vocab,
                                       bool grow_vocabulary) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read captions " + path.string());
  std::vector<SentenceSet> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() < 3 || fields.size() > 4) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected caption_id, image_id, text[, tags]");
    }
    SentenceSet s{fields[0], fields[1], vocab.tokenize(fields[2], grow_vocabulary), {}};
    if (fields.size() == 4) {
      auto tags = words_of(fields[3]);
      if (tags.size() + 2 != s.token_ids.size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": tag count does not match word count");
      }
      s.token_tags.push_back("<start>");
      s.token_tags.insert(s.token_tags.end(), tags.begin(), tags.end());
      s.token_tags.push_back("<end>");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_captions(const std::filesystem::path& path, std::span<const SentenceSet> sentences,
                    const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write captions " + path.string());
  for (const auto& s : sentences) {
    out << s.caption_id << '\t' << s.image_id << '\t';
    // Sentinels are regenerated by the tokenizer on load.
    for (std::size_t i = 1; i + 1 < s.token_ids.size(); ++i) {
      out << (i > 1 ? " " : "") << vocab.word(s.token_ids[i]);
    }
    if (!s.token_tags.empty()) {
      out << '\t';
      for (std::size_t i = 1; i + 1 < s.token_tags.size(); ++i) {
        out << (i > 1 ? " " : "") << s.token_tags[i];
      }
    }
    out << '\n';
  }
}

// ---- dataset ----

std::vector<std::size_t> Dataset::caption_image_index() const {
  std::unordered_map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < regions.size(); ++i) image_index.emplace(regions[i].image_id, i);
  std::vector<std::size_t> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    auto it = image_index.find(s.image_id);
    if (it == image_index.end()) {
      throw DataError("caption " + s.caption_id + " refers to unknown image " + s.image_id);
    }
    out.push_back(it->second);
  }
  return out;
}

void Dataset::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_features(dir / "features.xmrf", regions);
  write_captions(dir / "captions.tsv", sentences, vocabulary);
  manifest.save(dir / "manifest.txt");
  vocabulary.save(dir / "vocab.txt");
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = DatasetManifest::load(dir / "manifest.txt");
  const bool have_vocab = std::filesystem::exists(dir / "vocab.txt");
  if (have_vocab) ds.vocabulary = Vocabulary::load(dir / "vocab.txt");
  ds.regions = load_features(dir / "features.xmrf");
  const auto images = ds.manifest.images();
  if (images.size() != ds.regions.size()) {
    throw DataError("manifest lists " + std::to_string(images.size()) + " images but " +
                    "features.xmrf has " + std::to_string(ds.regions.size()));
  }
  for (std::size_t i = 0; i < images.size(); ++i) ds.regions[i].image_id = images[i];
  auto sentences = load_captions(dir / "captions.tsv", ds.vocabulary, !have_vocab);
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < sentences.size(); ++i) by_id.emplace(sentences[i].caption_id, i);
  for (const auto& [image, caption] : ds.manifest.pairs) {
    auto it = by_id.find(caption);
    if (it == by_id.end()) throw DataError("manifest caption " + caption + " missing from captions.tsv");
    SentenceSet s = sentences[it->second];
    if (s.image_id != image) {
      throw DataError("caption " + caption + " belongs to " + s.image_id + " in captions.tsv but " +
                      image + " in the manifest");
    }
    ds.sentences.push_back(std::move(s));
  }
  return ds;
}

// ---- synthetic ----

std::size_t SyntheticSpec::concepts_per_pair() const {
  return std::max<std::size_t>(1, std::min(num_regions, num_words) / 2);
}

void SyntheticSpec::validate() const {
  if (num_pairs == 0 || num_regions == 0 || num_words == 0 || raw_dim == 0 ||
      latent_concept_count == 0) {
    throw ConfigError("synthetic counts must all be >= 1");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw ConfigError("noise_scale must be finite and >= 0");
  }
  // One latent channel per concept word.
  if (latent_concept_count > raw_dim) {
    throw ConfigError("latent_concept_count " + std::to_string(latent_concept_count) +
                      " exceeds the concept vocabulary capacity (raw_dim = " +
                      std::to_string(raw_dim) + ")");
  }
  const std::size_t per_pair = concepts_per_pair();
  if (latent_concept_count < per_pair ||
      binomial(latent_concept_count, per_pair) < static_cast<double>(num_pairs)) {
    throw ConfigError("latent_concept_count " + std::to_string(latent_concept_count) +
                      " cannot give " + std::to_string(num_pairs) +
                      " distinct concept sets of size " + std::to_string(per_pair));
  }
}

SyntheticData SyntheticData::subset(std::size_t begin, std::size_t end,
                                    const std::string& split) const {
  if (begin > end || end > data.regions.size() || data.manifest.captions_per_image != 1) {
    throw ConfigError("invalid synthetic subset range");
  }
  SyntheticData out;
  out.data.vocabulary = data.vocabulary;
  out.data.manifest.split = split;
  out.data.manifest.captions_per_image = 1;
  for (std::size_t i = begin; i < end; ++i) {
    out.data.regions.push_back(data.regions[i]);
    out.data.sentences.push_back(data.sentences[i]);
    out.data.manifest.pairs.push_back(data.manifest.pairs[i]);
    out.concepts.push_back(concepts[i]);
  }
  return out;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t d = spec.raw_dim;
  const std::size_t n_concepts = spec.latent_concept_count;
  const std::size_t per_pair = spec.concepts_per_pair();
  constexpr std::size_t kFillerWords = 4;
  constexpr std::size_t kStyles = 8;
  constexpr double kStyleScale = 0.8;
  constexpr double kSpread = 0.1;

  SyntheticData out;
  Dataset& ds = out.data;
  std::vector<std::size_t> concept_token(n_concepts), filler_token(kFillerWords);
  for (std::size_t c = 0; c < n_concepts; ++c) concept_token[c] = ds.vocabulary.add("concept" + std::to_string(c));
  for (std::size_t f = 0; f < kFillerWords; ++f) filler_token[f] = ds.vocabulary.add("filler" + std::to_string(f));

  auto unit = [](std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };

  // Concept c is channel c plus a small isotropic spread.
  std::vector<std::vector<double>> concept_dir(n_concepts, std::vector<double>(d));
  for (std::size_t c = 0; c < n_concepts; ++c) {
    for (auto& x : concept_dir[c]) x = kSpread * gauss(rng);
    concept_dir[c][c] += 1.0;
    concept_dir[c] = unit(concept_dir[c]);
  }
  // Nuisance styles live on the channels no concept uses (all channels when
  // there are none), so relevance is channel dependent.
  const std::size_t style_begin = n_concepts < d ? n_concepts : 0;
  std::vector<std::vector<double>> style_dir(kStyles, std::vector<double>(d, 0.0));
  for (auto& s : style_dir) {
    for (std::size_t k = style_begin; k < d; ++k) s[k] = gauss(rng);
    s = unit(s);
  }

  std::set<std::vector<std::size_t>> used;
  std::vector<std::size_t> all(n_concepts);
  std::iota(all.begin(), all.end(), 0);
  std::uniform_int_distribution<std::size_t> pick_style(0, kStyles - 1);
  std::uniform_int_distribution<std::size_t> pick_filler(0, kFillerWords - 1);

  ds.manifest.split = "synthetic";
  ds.manifest.captions_per_image = 1;
  for (std::size_t p = 0; p < spec.num_pairs; ++p) {
    std::vector<std::size_t> chosen;
    do {
      std::shuffle(all.begin(), all.end(), rng);
      chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(per_pair));
      std::sort(chosen.begin(), chosen.end());
    } while (!used.insert(chosen).second);

    // Concept regions first, then distractors, then shuffled.
    std::vector<std::ptrdiff_t> region_concept(spec.num_regions, -1);
    for (std::size_t i = 0; i < per_pair && i < spec.num_regions; ++i) region_concept[i] = static_cast<std::ptrdiff_t>(chosen[i]);
    std::shuffle(region_concept.begin(), region_concept.end(), rng);

    Tensor features = Tensor::matrix(spec.num_regions, d);
    for (std::size_t r = 0; r < spec.num_regions; ++r) {
      const auto& style = style_dir[pick_style(rng)];
      for (std::size_t k = 0; k < d; ++k) {
        double v = kStyleScale * style[k] + spec.noise_scale * gauss(rng);
        if (region_concept[r] >= 0) v += concept_dir[static_cast<std::size_t>(region_concept[r])][k];
        features.at(r, k) = v;
      }
    }
    const std::string image_id = "img" + std::to_string(p);
    const std::string caption_id = "cap" + std::to_string(p);

    std::vector<std::size_t> words;
    std::vector<std::string> tags;
    for (std::size_t c : chosen) {
      words.push_back(concept_token[c]);
      tags.emplace_back("CONCEPT");
    }
    while (words.size() < spec.num_words) {
      words.push_back(filler_token[pick_filler(rng)]);
      tags.emplace_back("FILLER");
    }
    words.resize(spec.num_words);
    tags.resize(spec.num_words);
    std::vector<std::size_t> order(words.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    SentenceSet s{caption_id, image_id, {Vocabulary::kStart}, {"<start>"}};
    for (std::size_t i : order) {
      s.token_ids.push_back(words[i]);
      s.token_tags.push_back(tags[i]);
    }
    s.token_ids.push_back(Vocabulary::kEnd);
    s.token_tags.emplace_back("<end>");

    ds.regions.push_back(RegionSet::make(image_id, std::move(features)));
    ds.sentences.push_back(std::move(s));
    ds.manifest.pairs.emplace_back(image_id, caption_id);
    out.concepts.push_back(std::move(chosen));
  }
  return out;
}

}  // namespace regmatch
