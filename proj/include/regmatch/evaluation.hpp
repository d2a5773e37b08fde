#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "regmatch/pipeline.hpp"
#include "regmatch/tensor.hpp"

namespace regmatch {

inline const std::vector<std::size_t> kDefaultKs{1, 5, 10};

struct RecallReport {
  std::string direction;
  std::vector<std::size_t> ks;
  std::vector<double> recalls;

  double at(std::size_t k) const;
  double sum() const;
};

// sims [Q x G], rows are queries. A query hits at k when any of its
// ground-truth gallery items ranks within the top k; equal scores rank by
// gallery index.
RecallReport recall_at_k(const Tensor& sims, const std::vector<std::vector<std::size_t>>& truth,
                         std::span<const std::size_t> ks, const std::string& direction = "");

// Zero-based rank of the best ranked ground-truth item.
std::size_t best_rank(std::span<const double> row, std::span<const std::size_t> truth);

struct RetrievalReport {
  RecallReport image_to_text;  // image queries, caption gallery
  RecallReport text_to_image;  // caption queries, image gallery
  double rsum() const { return image_to_text.sum() + text_to_image.sum(); }
};

// scores [images x captions]; caption_image[c] is the image of caption c.
RetrievalReport evaluate_retrieval(const Tensor& scores, std::span<const std::size_t> caption_image,
                                   std::span<const std::size_t> ks);

struct FoldedReport {
  std::vector<RetrievalReport> folds;
  RetrievalReport mean;
  RetrievalReport full;
};

// Images are split into `folds` consecutive equal blocks; each block is
// evaluated against its own captions.
FoldedReport five_fold_eval(const Tensor& scores, std::span<const std::size_t> caption_image,
                            std::span<const std::size_t> ks, std::size_t folds = 5);
RetrievalReport mean_report(std::span<const RetrievalReport> reports);

// Rebuilds the [images x captions] matrix from score records in manifest order.
Tensor score_matrix(std::span<const SimilarityRecord> records, const DatasetManifest& manifest);
std::vector<std::size_t> caption_image_index(const DatasetManifest& manifest);

// 1-D Wasserstein distance between two empirical samples.
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

struct DiagnosticsInput {
  // Per aggregation step, [P x Q x 1] each; pairs are positives.
  std::vector<Tensor> betas;
  Tensor query_mask;                            // [P x Q x 1] or empty
  std::vector<std::vector<std::string>> tags;   // per pair, per query; may be empty
  // Per attention pass, [P x Q x 1] cosines for positive and negative pairs.
  std::vector<Tensor> positive_cosines;
  std::vector<Tensor> negative_cosines;
  Tensor negative_mask;
};

struct DiagnosticsBundle {
  // Per step: tag -> mean over sentences of the tag's total weight.
  std::vector<std::map<std::string, double>> beta_mass;
  // Per step: tag -> mean weight per token of that tag.
  std::vector<std::map<std::string, double>> beta_mean;
  std::vector<double> wasserstein;  // per attention pass
};

DiagnosticsBundle diagnostics(const DiagnosticsInput& input);

// Traces positives (caption, its image) and negatives (caption, next image).
DiagnosticsInput collect_diagnostics(const MatchingModel& model, const Dataset& data,
                                     std::size_t max_pairs = 256);

}  // namespace regmatch
