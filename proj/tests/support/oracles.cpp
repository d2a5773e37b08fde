#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

Mat random_mat(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Mat m(rows, Vec(cols));
  for (auto& r : m)
    for (auto& x : r) x = g(rng);
  return m;
}

Mat uniform_mat(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, Vec(cols));
  for (auto& r : m)
    for (auto& x : r) x = u(rng);
  return m;
}

Mat from_tensor(const regmatch::Tensor& t, std::size_t batch) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(batch, r, c);
  return m;
}

regmatch::Tensor to_tensor(const Mat& m) { return stack({m}); }

regmatch::Tensor stack(const std::vector<Mat>& mats) {
  const std::size_t rows = mats.at(0).size(), cols = mats[0].at(0).size();
  regmatch::Tensor t(regmatch::Shape{mats.size(), rows, cols});
  for (std::size_t b = 0; b < mats.size(); ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) t(b, r, c) = mats[b][r][c];
  return t;
}

static double norm(const Vec& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(const Vec& a, const Vec& b) {
  double dot = 0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  const double n = norm(a) * norm(b);
  return n == 0 ? 0.0 : dot / n;
}

Attention attend(const Mat& q, const Mat& keys, const Mat& e, const Vec& lambda,
                 std::size_t valid) {
  const std::size_t Q = q.size(), K = keys.size(), d = q[0].size();
  Mat c(K, Vec(Q, 0.0));
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < valid; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += keys[i][k] * e[j][k] * q[j][k];
      c[i][j] = dot / (norm(keys[i]) * norm(q[j]));
    }
  Mat cbar(K, Vec(Q, 0.0));
  for (std::size_t i = 0; i < K; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < valid; ++j) ss += std::max(c[i][j], 0.0) * std::max(c[i][j], 0.0);
    const double den = std::max(std::sqrt(ss), 1e-8);
    for (std::size_t j = 0; j < valid; ++j) cbar[i][j] = std::max(c[i][j], 0.0) / den;
  }
  Attention out{Mat(Q, Vec(d, 0.0)), Mat(K, Vec(Q, 0.0))};
  for (std::size_t j = 0; j < valid; ++j) {
    double z = 0;
    for (std::size_t i = 0; i < K; ++i) z += std::exp(lambda[j] * cbar[i][j]);
    for (std::size_t i = 0; i < K; ++i) {
      out.weights[i][j] = std::exp(lambda[j] * cbar[i][j]) / z;
      for (std::size_t k = 0; k < d; ++k) out.attended[j][k] += out.weights[i][j] * keys[i][k];
    }
  }
  return out;
}

double mean_cosine(const Mat& q, const Mat& attended, std::size_t valid) {
  double s = 0;
  for (std::size_t j = 0; j < valid; ++j) s += cosine(q[j], attended[j]);
  return s / static_cast<double>(valid);
}

Vec linear(const regmatch::Linear& layer, const Vec& x) {
  const auto& w = layer.weight.value();
  Vec y(w.rows(), 0.0);
  for (std::size_t o = 0; o < w.rows(); ++o) {
    for (std::size_t i = 0; i < w.cols(); ++i) y[o] += w(0, o, i) * x[i];
    if (layer.bias.defined()) y[o] += layer.bias.value()(0, 0, o);
  }
  return y;
}

Vec alignment(const Vec& q, const Vec& v, const regmatch::Linear& projection) {
  Vec sq(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) sq[k] = (q[k] - v[k]) * (q[k] - v[k]);
  Vec a = linear(projection, sq);
  const double n = norm(a);
  for (double& x : a) x = n == 0 ? 0.0 : x / n;
  return a;
}

static Vec tanh_vec(Vec v) {
  for (double& x : v) x = std::tanh(x);
  return v;
}

Factors regulate(const Vec& input, const Factors& prev, const regmatch::RcrParams& p, bool residual) {
  const Vec de = tanh_vec(linear(p.e_out, tanh_vec(linear(p.e_in, input))));
  Factors out{Vec(de.size()), 0.0};
  for (std::size_t k = 0; k < de.size(); ++k) {
    out.e[k] = std::min(1.0, std::max(-1.0, de[k] + (residual ? prev.e[k] : 0.0)));
  }
  const double dl = linear(p.lambda_out, tanh_vec(linear(p.lambda_in, input)))[0];
  out.lambda = std::max(0.0, dl + (residual ? prev.lambda : 0.0));
  return out;
}

Guidance init_guidance(const Mat& a) {
  Guidance g{Vec(a[0].size(), 0.0), Vec(a.size(), 1.0 / static_cast<double>(a.size()))};
  for (const auto& row : a)
    for (std::size_t k = 0; k < row.size(); ++k) g.guidance[k] += row[k] / static_cast<double>(a.size());
  return g;
}

Guidance step_guidance(const Guidance& g, const Mat& a, const regmatch::RarParams& p, bool residual) {
  const Vec gg = tanh_vec(linear(p.guide, g.guidance));
  Vec s(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    Vec u = tanh_vec(linear(p.local, a[j]));
    for (std::size_t k = 0; k < u.size(); ++k) u[k] *= gg[k];
    s[j] = linear(p.scorer, u)[0];
  }
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0;
  for (double x : s) z += std::exp(x - mx);
  Guidance out{Vec(a[0].size(), 0.0), Vec(a.size())};
  for (std::size_t j = 0; j < a.size(); ++j) {
    out.beta[j] = std::exp(s[j] - mx) / z;
    for (std::size_t k = 0; k < a[j].size(); ++k) out.guidance[k] += out.beta[j] * a[j][k];
  }
  if (residual)
    for (std::size_t k = 0; k < out.guidance.size(); ++k) out.guidance[k] += g.guidance[k];
  return out;
}

double head(const Vec& guidance, const regmatch::RarParams& p) {
  return 1.0 / (1.0 + std::exp(-linear(p.head, guidance)[0]));
}

double hinge(const Mat& s, double margin) {
  const std::size_t n = s.size();
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double worst_caption = 0, worst_image = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      worst_caption = std::max(worst_caption, std::max(0.0, margin + s[i][k] - s[i][i]));
      worst_image = std::max(worst_image, std::max(0.0, margin + s[k][i] - s[i][i]));
    }
    loss += worst_caption;
    loss += worst_image;
  }
  return loss;
}

std::vector<double> recall(const Mat& sims, const std::vector<std::vector<std::size_t>>& truth,
                           const std::vector<std::size_t>& ks) {
  std::vector<double> out(ks.size(), 0.0);
  for (std::size_t q = 0; q < sims.size(); ++q) {
    std::vector<std::size_t> order(sims[q].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sims[q][a] > sims[q][b]; });
    for (std::size_t i = 0; i < ks.size(); ++i) {
      bool hit = false;
      for (std::size_t r = 0; r < ks[i]; ++r)
        hit = hit || std::find(truth[q].begin(), truth[q].end(), order[r]) != truth[q].end();
      if (hit) out[i] += 1.0;
    }
  }
  for (double& x : out) x /= static_cast<double>(sims.size());
  return out;
}

double wasserstein_equal(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace oracle

namespace oracle {

double rcar(const Mat& q, const Mat& keys, const Schedule& s, const regmatch::Linear& align,
            const regmatch::RcrParams& rcr, const regmatch::RarParams& rar) {
  const std::size_t n_q = q.size(), d = q[0].size();
  Mat e(n_q, Vec(d, 1.0));
  Vec lambda(n_q, s.lambda0);
  auto alignments = [&](const Attention& att) {
    Mat a;
    for (std::size_t j = 0; j < n_q; ++j) a.push_back(alignment(q[j], att.attended[j], align));
    return a;
  };
  Attention att = attend(q, keys, e, lambda, n_q);
  Mat a = alignments(att);
  Guidance g = init_guidance(a);
  const std::size_t iterations = s.rcr_every_step ? s.n_rar : std::max(s.n_rar, s.n_rcr);
  for (std::size_t n = 1; n <= iterations; ++n) {
    if (s.rcr_every_step || n <= s.n_rcr) {
      for (std::size_t j = 0; j < n_q; ++j) {
        Factors f = regulate(a[j], {e[j], lambda[j]}, rcr, s.residual_rcr);
        e[j] = f.e;
        lambda[j] = f.lambda;
      }
      att = attend(q, keys, e, lambda, n_q);
      a = alignments(att);
    }
    if (n <= s.n_rar) g = step_guidance(g, a, rar);
  }
  return head(g.guidance, rar);
}

}  // namespace oracle
