#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "regmatch/autograd.hpp"

namespace regmatch {

// Named trainable tensors in insertion order. Copies share storage; use
// clone() for an independent deep copy.
class ParameterSet {
 public:
  ag::Var& add(const std::string& name, Tensor init);
  ag::Var& get(const std::string& name);
  const ag::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, ag::Var>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  void zero_grad();
  ParameterSet clone() const;

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng);

// y = x W^T + b with W [out x in] and b [1 x out].
struct Linear {
  ag::Var weight;
  ag::Var bias;

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng, bool with_bias = true);
  static Linear bind(ParameterSet& params, const std::string& name);
  ag::Var operator()(const ag::Var& x) const;
  std::size_t in_features() const { return weight.shape().cols; }
  std::size_t out_features() const { return weight.shape().rows; }
};

}  // namespace regmatch
