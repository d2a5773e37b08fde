#pragma once

// Straight-line reference implementations used as test oracles. They work on
// nested vectors with plain loops and share no code with the library.

#include <cstdint>
#include <random>
#include <vector>

#include "regmatch/params.hpp"
#include "regmatch/rar.hpp"
#include "regmatch/rcr.hpp"
#include "regmatch/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat random_mat(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0);
Mat uniform_mat(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi);
Mat from_tensor(const regmatch::Tensor& t, std::size_t batch = 0);
regmatch::Tensor to_tensor(const Mat& m);
regmatch::Tensor stack(const std::vector<Mat>& mats);  // [B x rows x cols]

struct Attention {
  Mat attended;  // [Q x d]
  Mat weights;   // [K x Q]
};

// Queries attend keys with per-query channel weights e [Q x d] and
// temperatures lambda [Q]. Only the first `valid_queries` queries take part
// in the per-key normalization.
Attention attend(const Mat& queries, const Mat& keys, const Mat& e, const Vec& lambda,
                 std::size_t valid_queries);

double mean_cosine(const Mat& queries, const Mat& attended, std::size_t valid_queries);
double cosine(const Vec& a, const Vec& b);

// y = W x + b for a Linear layer (bias optional).
Vec linear(const regmatch::Linear& layer, const Vec& x);

Vec alignment(const Vec& query, const Vec& attended, const regmatch::Linear& projection);

struct Factors {
  Vec e;
  double lambda;
};
Factors regulate(const Vec& input, const Factors& previous, const regmatch::RcrParams& params,
                 bool residual);

struct Guidance {
  Vec guidance;
  Vec beta;
};
Guidance init_guidance(const Mat& alignments);
Guidance step_guidance(const Guidance& g, const Mat& alignments, const regmatch::RarParams& params,
                       bool residual = false);
double head(const Vec& guidance, const regmatch::RarParams& params);

// Hardest negatives by exhaustive enumeration of every hinge term.
double hinge(const Mat& sims, double margin);

// Full stable argsort ranking.
std::vector<double> recall(const Mat& sims, const std::vector<std::vector<std::size_t>>& truth,
                           const std::vector<std::size_t>& ks);

// Equal-size samples: mean absolute difference of sorted values.
double wasserstein_equal(std::vector<double> a, std::vector<double> b);

}  // namespace oracle

namespace oracle {

struct Schedule {
  std::size_t n_rar = 2;
  std::size_t n_rcr = 1;
  bool rcr_every_step = false;
  bool residual_rcr = true;
  double lambda0 = 10.0;
};

// Algorithm-level composition of the single-step oracles for one pair.
// Queries must all be valid; keys are unmasked.
double rcar(const Mat& queries, const Mat& keys, const Schedule& schedule,
            const regmatch::Linear& align, const regmatch::RcrParams& rcr,
            const regmatch::RarParams& rar);

}  // namespace oracle
