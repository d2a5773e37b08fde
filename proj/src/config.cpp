#include "regmatch/config.hpp"

#include <fstream>
#include <sstream>

#include "regmatch/errors.hpp"

namespace regmatch {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    out.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

void ConfigMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << str();
}

std::string ConfigMap::str() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
  return out.str();
}

void ConfigMap::apply(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + o);
    values_[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
}

void ConfigMap::merge(const ConfigMap& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects a number, got '" + it->second + "'");
  }
}

long long ConfigMap::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " expects an integer, got '" + it->second + "'");
  }
}

std::size_t ConfigMap::get_size(const std::string& key, std::size_t fallback) const {
  const long long v = get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError("config key " + key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " expects a boolean, got '" + v + "'");
}

}  // namespace regmatch
