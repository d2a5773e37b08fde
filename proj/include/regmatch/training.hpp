#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "regmatch/config.hpp"
#include "regmatch/pipeline.hpp"

namespace regmatch {

struct LossConfig {
  double margin = 0.2;
  std::size_t batch_size = 128;

  void validate() const;
};

// Sum over positives of the hinge on the hardest caption negative (per row)
// and on the hardest image negative (per column). Rows are images, columns
// captions, the diagonal holds the positives. Ties pick the lowest index.
ag::Var hinge_loss(const ag::Var& sims, double margin);  // sims [1 x B x B] -> [1 x 1 x 1]
double hinge_loss(const Tensor& sims, double margin);

struct LrPhase {
  std::size_t epochs = 0;
  double lr = 2e-4;
};

struct TrainSchedule {
  std::vector<LrPhase> phases{{10, 2e-4}, {10, 2e-5}};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  std::size_t total_epochs() const;
  double lr_at(std::size_t epoch) const;  // zero-based epoch
  // "2e-4:10,2e-5:10" = lr:epochs per phase.
  static TrainSchedule parse(const std::string& text);
  std::string str() const;
};

class Adam {
 public:
  Adam(ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Applies one update from the accumulated gradients; parameters without a
  // gradient are left untouched.
  void step(double lr);
  std::size_t steps() const { return steps_; }

 private:
  ParameterSet* params_;
  double beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainConfig {
  PipelineConfig pipeline;
  LossConfig loss;
  TrainSchedule schedule;
  std::uint64_t seed = 1;
  std::size_t eval_block = 64;
  std::filesystem::path run_dir;  // empty: nothing written
  bool checkpoint_every_epoch = true;
  // Checkpoint whose same-named, same-shaped tensors overwrite the fresh
  // initialization (e.g. encoders of a trained baseline).
  std::filesystem::path init_from;

  void validate() const;
  ConfigMap to_map() const;
  static TrainConfig from_map(const ConfigMap& map);
};

struct EpochStats {
  std::size_t epoch = 0;  // one-based
  double mean_loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_rsum;
};

struct TrainResult {
  MatchingModel model;       // after the last epoch
  MatchingModel best;        // best validation recall sum, else the last
  std::size_t best_epoch = 0;
  double initial_loss = 0.0;  // mean loss of the untrained model over the first epoch's batches
  std::vector<EpochStats> epochs;
};

// Mean hinge loss over the batches of one pass in caption order, no updates.
double dataset_loss(const MatchingModel& model, const Dataset& data, const LossConfig& loss);

TrainResult train(const TrainConfig& config, const Dataset& train_data,
                  const Dataset* val_data = nullptr, std::ostream* log = nullptr);

// Recall sum (R@1,5,10 in both retrieval directions, k clipped to the gallery).
double recall_sum(const MatchingModel& model, const Dataset& data, std::size_t block = 64);

}  // namespace regmatch
