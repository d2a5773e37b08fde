#pragma once

#include <filesystem>
#include <string>

#include "regmatch/config.hpp"
#include "regmatch/datamodel.hpp"
#include "regmatch/params.hpp"
#include "regmatch/pipeline.hpp"

namespace regmatch {

// Named 64-bit tensors plus string metadata.
struct Checkpoint {
  ConfigMap meta;
  ParameterSet params;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

// Config snapshot and vocabulary go into the metadata.
Checkpoint make_checkpoint(const MatchingModel& model, const Vocabulary& vocab,
                           const ConfigMap& extra = {});
MatchingModel model_from_checkpoint(const Checkpoint& checkpoint);
Vocabulary vocabulary_from_checkpoint(const Checkpoint& checkpoint);

bool same_parameters(const ParameterSet& a, const ParameterSet& b);

}  // namespace regmatch
