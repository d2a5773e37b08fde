#include "regmatch/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "regmatch/errors.hpp"

namespace regmatch {

double RecallReport::at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recalls[i];
  throw ConfigError("recall at " + std::to_string(k) + " was not computed");
}

double RecallReport::sum() const {
  double s = 0.0;
  for (double r : recalls) s += r;
  return s;
}

std::size_t best_rank(std::span<const double> row, std::span<const std::size_t> truth) {
  if (truth.empty()) throw DataError("query without ground truth");
  std::size_t best = row.size();
  for (std::size_t t : truth) {
    if (t >= row.size()) throw DataError("ground-truth index outside the gallery");
    std::size_t rank = 0;
    for (std::size_t g = 0; g < row.size(); ++g) {
      if (row[g] > row[t] || (row[g] == row[t] && g < t)) ++rank;
    }
    best = std::min(best, rank);
  }
  return best;
}

RecallReport recall_at_k(const Tensor& sims, const std::vector<std::vector<std::size_t>>& truth,
                         std::span<const std::size_t> ks, const std::string& direction) {
  const std::size_t queries = sims.rows();
  const std::size_t gallery = sims.cols();
  if (truth.size() != queries) {
    throw DataError("ground truth covers " + std::to_string(truth.size()) + " of " +
                    std::to_string(queries) + " queries");
  }
  for (std::size_t k : ks) {
    if (k == 0 || k > gallery) {
      throw ConfigError("k=" + std::to_string(k) + " outside 1.." + std::to_string(gallery));
    }
  }
  RecallReport report{direction, {ks.begin(), ks.end()}, std::vector<double>(ks.size(), 0.0)};
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t q = 0; q < queries; ++q) {
    const std::size_t rank = best_rank(sims.row_span(0, q), truth[q]);
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (rank < ks[i]) ++hits[i];
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    report.recalls[i] = queries ? static_cast<double>(hits[i]) / static_cast<double>(queries) : 0.0;
  }
  return report;
}

RetrievalReport evaluate_retrieval(const Tensor& scores, std::span<const std::size_t> caption_image,
                                   std::span<const std::size_t> ks) {
  if (scores.cols() != caption_image.size()) throw ShapeError("score matrix does not match captions");
  std::vector<std::vector<std::size_t>> image_truth(scores.rows());
  std::vector<std::vector<std::size_t>> caption_truth(caption_image.size());
  for (std::size_t c = 0; c < caption_image.size(); ++c) {
    if (caption_image[c] >= scores.rows()) throw DataError("caption image index out of range");
    image_truth[caption_image[c]].push_back(c);
    caption_truth[c].push_back(caption_image[c]);
  }
  return {recall_at_k(scores, image_truth, ks, "i2t"),
          recall_at_k(scores.transposed(), caption_truth, ks, "t2i")};
}

RetrievalReport mean_report(std::span<const RetrievalReport> reports) {
  if (reports.empty()) throw DataError("no reports to average");
  RetrievalReport mean = reports[0];
  const double n = static_cast<double>(reports.size());
  for (std::size_t i = 0; i < mean.image_to_text.recalls.size(); ++i) {
    double a = 0.0, b = 0.0;
    for (const auto& r : reports) {
      a += r.image_to_text.recalls.at(i);
      b += r.text_to_image.recalls.at(i);
    }
    mean.image_to_text.recalls[i] = a / n;
    mean.text_to_image.recalls[i] = b / n;
  }
  return mean;
}

FoldedReport five_fold_eval(const Tensor& scores, std::span<const std::size_t> caption_image,
                            std::span<const std::size_t> ks, std::size_t folds) {
  const std::size_t n = scores.rows();
  if (folds == 0 || n == 0 || n % folds != 0) {
    throw ConfigError(std::to_string(n) + " images do not split into " + std::to_string(folds) +
                      " equal folds");
  }
  const std::size_t size = n / folds;
  FoldedReport out;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * size, hi = lo + size;
    std::vector<std::size_t> captions;
    for (std::size_t c = 0; c < caption_image.size(); ++c)
      if (caption_image[c] >= lo && caption_image[c] < hi) captions.push_back(c);
    Tensor sub = Tensor::matrix(size, captions.size());
    std::vector<std::size_t> sub_image(captions.size());
    for (std::size_t j = 0; j < captions.size(); ++j) {
      sub_image[j] = caption_image[captions[j]] - lo;
      for (std::size_t i = 0; i < size; ++i) sub.at(i, j) = scores.at(lo + i, captions[j]);
    }
    out.folds.push_back(evaluate_retrieval(sub, sub_image, ks));
  }
  out.mean = mean_report(out.folds);
  out.full = evaluate_retrieval(scores, caption_image, ks);
  return out;
}

std::vector<std::size_t> caption_image_index(const DatasetManifest& manifest) {
  const auto images = manifest.images();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < images.size(); ++i) index[images[i]] = i;
  std::vector<std::size_t> out;
  for (const auto& [image, caption] : manifest.pairs) out.push_back(index.at(image));
  return out;
}

Tensor score_matrix(std::span<const SimilarityRecord> records, const DatasetManifest& manifest) {
  const auto images = manifest.images();
  const auto captions = manifest.captions();
  std::map<std::string, std::size_t> image_index, caption_index;
  for (std::size_t i = 0; i < images.size(); ++i) image_index[images[i]] = i;
  for (std::size_t c = 0; c < captions.size(); ++c) caption_index[captions[c]] = c;
  Tensor out = Tensor::matrix(images.size(), captions.size());
  std::vector<char> seen(out.size(), 0);
  for (const auto& r : records) {
    const auto i = image_index.find(r.image_id);
    const auto c = caption_index.find(r.caption_id);
    if (i == image_index.end() || c == caption_index.end()) {
      throw DataError("score for unknown pair " + r.image_id + "/" + r.caption_id);
    }
    char& flag = seen[i->second * captions.size() + c->second];
    if (flag) throw DataError("duplicate score for pair " + r.image_id + "/" + r.caption_id);
    flag = 1;
    out.at(i->second, c->second) = r.score;
  }
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t c = 0; c < captions.size(); ++c)
      if (!seen[i * captions.size() + c]) {
        throw DataError("missing score for pair " + images[i] + "/" + captions[c]);
      }
  return out;
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DataError("empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> points(a);
  points.insert(points.end(), b.begin(), b.end());
  std::sort(points.begin(), points.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    while (ia < a.size() && a[ia] <= points[k]) ++ia;
    while (ib < b.size() && b[ib] <= points[k]) ++ib;
    const double width = points[k + 1] - points[k];
    if (width > 0.0) total += std::abs(ia / na - ib / nb) * width;
  }
  return total;
}

namespace {

std::vector<double> pooled(const Tensor& values, const Tensor& mask) {
  std::vector<double> out;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (mask.empty() || mask.data()[i] != 0.0) out.push_back(values.data()[i]);
  return out;
}

}  // namespace

DiagnosticsBundle diagnostics(const DiagnosticsInput& in) {
  if (in.positive_cosines.empty() || in.positive_cosines.size() != in.negative_cosines.size()) {
    throw DataError("missing cosine traces for diagnostics");
  }
  DiagnosticsBundle out;
  for (const Tensor& beta : in.betas) {
    const std::size_t pairs = beta.batch(), queries = beta.rows();
    if (!in.query_mask.empty() && !(in.query_mask.shape() == beta.shape())) {
      throw DataError("beta trace does not match the query mask");
    }
    if (!in.tags.empty() && in.tags.size() != pairs) throw DataError("tags do not cover every pair");
    std::map<std::string, double> mass, token_sum, token_count;
    for (std::size_t p = 0; p < pairs; ++p) {
      std::map<std::string, double> local;
      for (std::size_t q = 0; q < queries; ++q) {
        if (!in.query_mask.empty() && in.query_mask(p, q, 0) == 0.0) continue;
        std::string tag = "all";
        if (!in.tags.empty() && q < in.tags[p].size() && !in.tags[p][q].empty()) tag = in.tags[p][q];
        local[tag] += beta(p, q, 0);
        token_sum[tag] += beta(p, q, 0);
        token_count[tag] += 1.0;
      }
      for (const auto& [tag, m] : local) mass[tag] += m;
    }
    for (auto& [tag, m] : mass) m /= static_cast<double>(pairs);
    std::map<std::string, double> mean;
    for (const auto& [tag, s] : token_sum) mean[tag] = s / token_count[tag];
    out.beta_mass.push_back(std::move(mass));
    out.beta_mean.push_back(std::move(mean));
  }
  for (std::size_t s = 0; s < in.positive_cosines.size(); ++s) {
    out.wasserstein.push_back(wasserstein_1d(pooled(in.positive_cosines[s], in.query_mask),
                                             pooled(in.negative_cosines[s], in.negative_mask)));
  }
  return out;
}

DiagnosticsInput collect_diagnostics(const MatchingModel& model, const Dataset& data,
                                     std::size_t max_pairs) {
  if (data.regions.size() < 2) throw DataError("diagnostics need at least two images");
  ag::NoGradGuard no_grad;
  const std::size_t n = std::min(max_pairs, data.sentences.size());
  if (n == 0) throw DataError("no captions for diagnostics");
  const auto image_of = data.caption_image_index();
  std::vector<const RegionSet*> images;
  for (const auto& r : data.regions) images.push_back(&r);
  std::vector<const SentenceSet*> captions;
  for (std::size_t c = 0; c < n; ++c) captions.push_back(&data.sentences[c]);
  const ag::Var encoded = model.encode_images(images);
  const TextEncoding texts = model.encode_texts(captions);

  std::vector<std::size_t> caption_ids(n), positive(n), negative(n);
  for (std::size_t c = 0; c < n; ++c) {
    caption_ids[c] = c;
    positive[c] = image_of[c];
    negative[c] = (image_of[c] + 1) % data.regions.size();
  }
  PipelineTrace pos, neg;
  model.score_pairs(encoded, texts, positive, caption_ids, &pos);
  model.score_pairs(encoded, texts, negative, caption_ids, &neg);

  DiagnosticsInput in;
  in.betas = pos.betas;
  in.positive_cosines = pos.query_cosines;
  in.negative_cosines = neg.query_cosines;
  if (model.config().direction == Direction::kT2I) {
    in.query_mask = texts.mask;
    in.negative_mask = texts.mask;
    bool any_tags = false;
    for (const auto* s : captions) any_tags = any_tags || !s->token_tags.empty();
    if (any_tags) {
      for (const auto* s : captions) {
        std::vector<std::string> tags = s->token_tags;
        tags.resize(texts.mask.rows());
        in.tags.push_back(std::move(tags));
      }
    }
  }
  return in;
}

}  // namespace regmatch
