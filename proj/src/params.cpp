#include "regmatch/params.hpp"

#include <cmath>

#include "regmatch/errors.hpp"

namespace regmatch {

ag::Var& ParameterSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, ag::Var::parameter(std::move(init)));
  return entries_.back().second;
}

ag::Var& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

const ag::Var& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, v] : entries_) out.add(name, v.value());
  return out;
}

Tensor fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng, bool with_bias) {
  Linear l;
  l.weight = params.add(name + ".weight", fan_in_uniform(out, in, in, rng));
  if (with_bias) l.bias = params.add(name + ".bias", fan_in_uniform(1, out, in, rng));
  return l;
}

Linear Linear::bind(ParameterSet& params, const std::string& name) {
  Linear l;
  l.weight = params.get(name + ".weight");
  if (params.contains(name + ".bias")) l.bias = params.get(name + ".bias");
  return l;
}

ag::Var Linear::operator()(const ag::Var& x) const {
  ag::Var y = ag::matmul(x, weight, false, true);
  return bias.defined() ? y + bias : y;
}

}  // namespace regmatch
