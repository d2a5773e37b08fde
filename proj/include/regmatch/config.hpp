#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace regmatch {

// Flat key=value settings; '#' starts a comment line.
class ConfigMap {
 public:
  ConfigMap() = default;
  explicit ConfigMap(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  static ConfigMap parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string str() const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  // Applies "key=value" overrides.
  void apply(const std::vector<std::string>& overrides);
  void merge(const ConfigMap& other);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace regmatch
