#include "regmatch/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "regmatch/errors.hpp"

namespace regmatch {

namespace {

constexpr char kMagic[4] = {'X', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    if (!in_.read(reinterpret_cast<char*>(b), 4)) fail(what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::string string(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    if (n && !in_.read(s.data(), n)) fail(what);
    return s;
  }
  void doubles(double* out, std::size_t n, const std::string& what) {
    static_assert(sizeof(double) == 8);
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char b[8];
      if (!in_.read(reinterpret_cast<char*>(b), 8)) fail(what.c_str());
      std::uint64_t bits = 0;
      for (int k = 7; k >= 0; --k) bits = (bits << 8) | b[k];
      std::memcpy(out + i, &bits, 8);
    }
  }
  [[noreturn]] void fail(const char* what) {
    throw FormatError(origin_ + ": truncated checkpoint while reading " + what);
  }

 private:
  std::istream& in_;
  std::string origin_;
};

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(meta.values().size()));
  for (const auto& [k, v] : meta.values()) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, var] : params.entries()) {
    put_string(out, name);
    const Shape& s = var.shape();
    put_u32(out, static_cast<std::uint32_t>(s.batch));
    put_u32(out, static_cast<std::uint32_t>(s.rows));
    put_u32(out, static_cast<std::uint32_t>(s.cols));
    for (double x : var.value().values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, 8);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  Reader r(in, path.string());
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint32_t n_meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = r.string("metadata key");
    ck.meta.set(key, r.string("metadata value"));
  }
  const std::uint32_t n_tensors = r.u32("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.string("tensor name");
    Shape s;
    s.batch = r.u32("tensor shape");
    s.rows = r.u32("tensor shape");
    s.cols = r.u32("tensor shape");
    Tensor t(s);
    r.doubles(t.data(), t.size(), "tensor " + name);
    if (!t.all_finite()) throw DataError(path.string() + ": non-finite values in tensor " + name);
    ck.params.add(name, std::move(t));
  }
  return ck;
}

Checkpoint make_checkpoint(const MatchingModel& model, const Vocabulary& vocab,
                           const ConfigMap& extra) {
  Checkpoint ck;
  ck.meta = model.config().to_map();
  ck.meta.merge(extra);
  std::string words;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    words += vocab.word(i);
    words += '\n';
  }
  ck.meta.set("vocabulary", words);
  ck.params = model.params().clone();
  return ck;
}

MatchingModel model_from_checkpoint(const Checkpoint& checkpoint) {
  ConfigMap config;
  static const char* kNotPipeline[] = {"vocabulary", "epoch", "rng_state"};
  for (const auto& [k, v] : checkpoint.meta.values()) {
    bool skip = false;
    for (const char* name : kNotPipeline) skip = skip || k == name;
    if (!skip) config.set(k, v);
  }
  return MatchingModel::from_params(PipelineConfig::from_map(config), checkpoint.params.clone());
}

Vocabulary vocabulary_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.meta.has("vocabulary")) throw FormatError("checkpoint has no vocabulary");
  std::istringstream in(checkpoint.meta.get_string("vocabulary", ""));
  Vocabulary vocab;
  std::size_t i = 0;
  for (std::string word; std::getline(in, word); ++i) {
    if (i < vocab.size()) {
      if (vocab.word(i) != word) throw FormatError("checkpoint vocabulary has unexpected sentinels");
    } else {
      vocab.add(word);
    }
  }
  return vocab;
}

bool same_parameters(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& [na, va] = a.entries()[i];
    const auto& [nb, vb] = b.entries()[i];
    if (na != nb || !(va.shape() == vb.shape())) return false;
    const auto x = va.value().values();
    const auto y = vb.value().values();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

}  // namespace regmatch
