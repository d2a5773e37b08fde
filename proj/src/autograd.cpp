#include "regmatch/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "regmatch/errors.hpp"

namespace regmatch::ag {
namespace {

thread_local bool g_grad_enabled = true;
thread_local KinkProbe* g_kink_probe = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct Strides {
  std::size_t batch, rows, cols;
};

Strides broadcast_strides(const Shape& s) {
  return {s.batch == 1 ? 0 : s.rows * s.cols, s.rows == 1 ? 0 : s.cols, s.cols == 1 ? std::size_t{0} : std::size_t{1}};
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto pick = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
  };
  return {pick(a.batch, b.batch), pick(a.rows, b.rows), pick(a.cols, b.cols)};
}

// Calls f(out_index, a_index, b_index) over the broadcast iteration space.
template <class F>
void for_each_pair(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  if (sa == out && sb == out) {
    for (std::size_t i = 0; i < out.size(); ++i) f(i, i, i);
    return;
  }
  const Strides ta = broadcast_strides(sa);
  const Strides tb = broadcast_strides(sb);
  std::size_t o = 0;
  for (std::size_t b = 0; b < out.batch; ++b)
    for (std::size_t r = 0; r < out.rows; ++r) {
      const std::size_t ia = b * ta.batch + r * ta.rows;
      const std::size_t ib = b * tb.batch + r * tb.rows;
      for (std::size_t c = 0; c < out.cols; ++c, ++o) f(o, ia + c * ta.cols, ib + c * tb.cols);
    }
}

bool any_requires_grad(const std::vector<Var>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Var& v) { return v.requires_grad(); });
}

// Iterates the 1-D lines of `shape` along `axis`: f(base, stride, length).
template <class F>
void for_each_line(const Shape& shape, int axis, F&& f) {
  const std::size_t rc = shape.rows * shape.cols;
  switch (axis) {
    case 0:
      for (std::size_t i = 0; i < rc; ++i) f(i, rc, shape.batch);
      break;
    case 1:
      for (std::size_t b = 0; b < shape.batch; ++b)
        for (std::size_t c = 0; c < shape.cols; ++c) f(b * rc + c, shape.cols, shape.rows);
      break;
    case 2:
      for (std::size_t b = 0; b < shape.batch; ++b)
        for (std::size_t r = 0; r < shape.rows; ++r)
          f((b * shape.rows + r) * shape.cols, std::size_t{1}, shape.cols);
      break;
    default:
      throw ShapeError("axis must be 0, 1 or 2");
  }
}

template <class Fwd, class Bwd>
Var unary(const Var& a, Fwd&& fwd, Bwd&& dydx) {
  Tensor out(a.shape());
  const double* x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = fwd(x[i]);
  return make_result(std::move(out), {a}, [dydx](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    double* g = in.grad_buffer().data();
    const double* go = self.grad.data();
    const double* xv = in.value.data();
    const double* yv = self.value.data();
    for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += go[i] * dydx(xv[i], yv[i]);
  });
}

}  // namespace

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void Var::backward() const {
  if (value().size() != 1) {
    throw ShapeError("backward() without seed needs a scalar, got " + shape().str());
  }
  backward(Tensor(shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
  if (!(seed.shape() == shape())) throw ShapeError("backward seed shape mismatch");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor& g = node_->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += seed.data()[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

KinkProbe::KinkProbe()
    : previous_(g_kink_probe), min_distance_(std::numeric_limits<double>::infinity()) {
  g_kink_probe = this;
}
KinkProbe::~KinkProbe() { g_kink_probe = previous_; }
void KinkProbe::note(double distance, std::uint64_t branch) noexcept {
  min_distance_ = std::min(min_distance_, distance);
  signature_ = (signature_ ^ (branch + 0x9e3779b97f4a7c15ULL)) * 1099511628211ULL;
}
void note_kink(double distance, std::uint64_t branch) noexcept {
  if (g_kink_probe) g_kink_probe->note(distance, branch);
}
bool kink_probe_active() noexcept { return g_kink_probe != nullptr; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

Tensor expand(const Tensor& mask, const Shape& shape) {
  if (mask.shape() == shape) return mask;
  Shape full = broadcast_shape(shape, mask.shape());
  if (!(full == shape)) throw ShapeError("mask " + mask.shape().str() + " wider than " + shape.str());
  Tensor out(shape);
  for_each_pair(shape, shape, mask.shape(),
                [&](std::size_t o, std::size_t, std::size_t im) { out.data()[o] = mask.data()[im]; });
  return out;
}

// ---- elementwise binary ----

namespace {

template <class Fwd, class GradA, class GradB>
Var binary(const Var& a, const Var& b, Fwd&& fwd, GradA&& grad_a, GradB&& grad_b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  const double* x = a.value().data();
  const double* y = b.value().data();
  double* z = out.data();
  for_each_pair(out_shape, a.shape(), b.shape(),
                [&](std::size_t o, std::size_t i, std::size_t j) { z[o] = fwd(x[i], y[j]); });
  return make_result(std::move(out), {a, b}, [grad_a, grad_b](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double* x = na.value.data();
    const double* y = nb.value.data();
    const double* go = self.grad.data();
    double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
    double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    for_each_pair(self.value.shape(), na.value.shape(), nb.value.shape(),
                  [&](std::size_t o, std::size_t i, std::size_t j) {
                    if (ga) ga[i] += grad_a(go[o], x[i], y[j]);
                    if (gb) gb[j] += grad_b(go[o], x[i], y[j]);
                  });
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var shift(const Var& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

// ---- elementwise unary ----

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  if (kink_probe_active()) {
    // Exact zeros come from masking and stay zero under perturbation.
    for (double x : a.value().values())
      if (x != 0.0) note_kink(std::abs(x), x > 0.0);
  }
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  if (kink_probe_active()) {
    for (double x : a.value().values()) note_kink(std::min(std::abs(x - lo), std::abs(x - hi)), x <= lo ? 0 : x < hi ? 1 : 2);
  }
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

// ---- matmul ----

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t batch = broadcast_shape({sa.batch, 1, 1}, {sb.batch, 1, 1}).batch;
  // Shared right operand with a plain left operand: one flattened GEMM.
  const bool flatten = sb.batch == 1 && sa.batch > 1 && !ta;
  const std::size_t ar = flatten ? sa.batch * sa.rows : sa.rows;
  const std::size_t m = ta ? sa.cols : ar;
  const std::size_t k = ta ? ar : sa.cols;
  const std::size_t kb = tb ? sb.cols : sb.rows;
  const std::size_t n = tb ? sb.rows : sb.cols;
  if (k != kb) {
    throw ShapeError("matmul inner dimension mismatch " + sa.str() + (ta ? "^T" : "") + " * " +
                     sb.str() + (tb ? "^T" : ""));
  }
  const std::size_t steps = flatten ? 1 : batch;
  const std::size_t a_step = (flatten || sa.batch == 1) ? 0 : sa.rows * sa.cols;
  const std::size_t b_step = sb.batch == 1 ? 0 : sb.rows * sb.cols;
  Tensor out(flatten ? Shape{sa.batch, sa.rows, n} : Shape{batch, m, n});
  const std::size_t a_rows = ar, a_cols = sa.cols;
  for (std::size_t p = 0; p < steps; ++p) {
    ConstMatMap A(a.value().data() + p * a_step, a_rows, a_cols);
    ConstMatMap B(b.value().data() + p * b_step, sb.rows, sb.cols);
    MatMap C(out.data() + p * m * n, m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make_result(std::move(out), {a, b},
                     [=](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       for (std::size_t p = 0; p < steps; ++p) {
                         ConstMatMap A(na.value.data() + p * a_step, a_rows, a_cols);
                         ConstMatMap B(nb.value.data() + p * b_step, sb.rows, sb.cols);
                         ConstMatMap G(self.grad.data() + p * m * n, m, n);
                         if (na.requires_grad) {
                           MatMap dA(na.grad_buffer().data() + p * a_step, a_rows, a_cols);
                           if (!ta && !tb) dA.noalias() += G * B.transpose();
                           else if (!ta && tb) dA.noalias() += G * B;
                           else if (ta && !tb) dA.noalias() += B * G.transpose();
                           else dA.noalias() += B.transpose() * G.transpose();
                         }
                         if (nb.requires_grad) {
                           MatMap dB(nb.grad_buffer().data() + p * b_step, sb.rows, sb.cols);
                           if (!tb && !ta) dB.noalias() += A.transpose() * G;
                           else if (!tb && ta) dB.noalias() += A * G;
                           else if (tb && !ta) dB.noalias() += G.transpose() * A;
                           else dB.noalias() += G.transpose() * A.transpose();
                         }
                       }
                     });
}

// ---- structural ----

Var gather(const Var& a, std::span<const std::size_t> index) {
  const Shape& s = a.shape();
  const std::size_t block = s.rows * s.cols;
  Tensor out(Shape{index.size(), s.rows, s.cols});
  for (std::size_t p = 0; p < index.size(); ++p) {
    if (index[p] >= s.batch) throw ShapeError("gather index out of range");
    std::copy_n(a.value().data() + index[p] * block, block, out.data() + p * block);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result(std::move(out), {a}, [idx = std::move(idx), block](Node& self) {
    Node& in = *self.inputs[0];
    double* g = in.grad_buffer().data();
    const double* go = self.grad.data();
    for (std::size_t p = 0; p < idx.size(); ++p) {
      double* dst = g + idx[p] * block;
      const double* src = go + p * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

Var sum(const Var& a, int axis) {
  Shape out_shape = a.shape();
  if (axis == 0) out_shape.batch = 1;
  else if (axis == 1) out_shape.rows = 1;
  else if (axis == 2) out_shape.cols = 1;
  else throw ShapeError("axis must be 0, 1 or 2");
  Tensor out(out_shape);
  const double* x = a.value().data();
  std::size_t line = 0;
  // Line enumeration order matches the row-major layout of the reduced shape.
  for_each_line(a.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += x[base + i * stride];
    out.data()[line++] = acc;
  });
  return make_result(std::move(out), {a}, [axis](Node& self) {
    Node& in = *self.inputs[0];
    double* g = in.grad_buffer().data();
    const double* go = self.grad.data();
    std::size_t line = 0;
    for_each_line(in.value.shape(), axis,
                  [&](std::size_t base, std::size_t stride, std::size_t len) {
                    const double v = go[line++];
                    for (std::size_t i = 0; i < len; ++i) g[base + i * stride] += v;
                  });
  });
}

Var softmax(const Var& a, int axis, const Tensor* mask) {
  Tensor full_mask;
  if (mask) full_mask = expand(*mask, a.shape());
  const double* m = mask ? full_mask.data() : nullptr;
  Tensor out(a.shape());
  const double* x = a.value().data();
  double* y = out.data();
  for_each_line(a.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t at = base + i * stride;
      if (!m || m[at] != 0.0) peak = std::max(peak, x[at]);
    }
    if (peak == -std::numeric_limits<double>::infinity()) {
      throw DomainError("softmax over a fully masked set");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t at = base + i * stride;
      y[at] = (!m || m[at] != 0.0) ? std::exp(x[at] - peak) : 0.0;
      total += y[at];
    }
    for (std::size_t i = 0; i < len; ++i) y[base + i * stride] /= total;
  });
  return make_result(std::move(out), {a}, [axis](Node& self) {
    Node& in = *self.inputs[0];
    double* g = in.grad_buffer().data();
    const double* go = self.grad.data();
    const double* y = self.value.data();
    for_each_line(self.value.shape(), axis,
                  [&](std::size_t base, std::size_t stride, std::size_t len) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < len; ++i) dot += y[base + i * stride] * go[base + i * stride];
                    for (std::size_t i = 0; i < len; ++i) {
                      const std::size_t at = base + i * stride;
                      g[at] += y[at] * (go[at] - dot);
                    }
                  });
  });
}

Var l2_normalize(const Var& a, int axis, double floor) {
  Tensor out(a.shape());
  std::vector<double> norms;
  const double* x = a.value().data();
  double* y = out.data();
  for_each_line(a.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
    double ss = 0.0;
    for (std::size_t i = 0; i < len; ++i) ss += x[base + i * stride] * x[base + i * stride];
    const double norm = std::sqrt(ss);
    if (floor > 0.0) note_kink(norm > 0.0 ? std::abs(norm - floor) : std::numeric_limits<double>::infinity(),
                               norm > floor);
    norms.push_back(norm);
    const double denom = std::max(norm, floor);
    for (std::size_t i = 0; i < len; ++i) {
      y[base + i * stride] = denom > 0.0 ? x[base + i * stride] / denom : 0.0;
    }
  });
  return make_result(std::move(out), {a}, [axis, floor, norms = std::move(norms)](Node& self) {
    Node& in = *self.inputs[0];
    double* g = in.grad_buffer().data();
    const double* go = self.grad.data();
    const double* y = self.value.data();
    std::size_t line = 0;
    for_each_line(self.value.shape(), axis,
                  [&](std::size_t base, std::size_t stride, std::size_t len) {
                    const double norm = norms[line++];
                    if (norm == 0.0 && floor == 0.0) return;
                    if (norm <= floor) {
                      for (std::size_t i = 0; i < len; ++i) g[base + i * stride] += go[base + i * stride] / floor;
                      return;
                    }
                    double dot = 0.0;
                    for (std::size_t i = 0; i < len; ++i) dot += y[base + i * stride] * go[base + i * stride];
                    for (std::size_t i = 0; i < len; ++i) {
                      const std::size_t at = base + i * stride;
                      g[at] += (go[at] - y[at] * dot) / norm;
                    }
                  });
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(shape);
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    double* g = in.grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad.data()[i];
  });
}

Var slice(const Var& a, int axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (start + length > s.dim(axis)) throw ShapeError("slice out of range on " + s.str());
  Shape out_shape = s;
  if (axis == 0) out_shape.batch = length;
  else if (axis == 1) out_shape.rows = length;
  else out_shape.cols = length;
  Tensor out(out_shape);
  auto source_index = [s, axis, start](std::size_t b, std::size_t r, std::size_t c) {
    if (axis == 0) b += start;
    else if (axis == 1) r += start;
    else c += start;
    return (b * s.rows + r) * s.cols + c;
  };
  std::size_t o = 0;
  for (std::size_t b = 0; b < out_shape.batch; ++b)
    for (std::size_t r = 0; r < out_shape.rows; ++r)
      for (std::size_t c = 0; c < out_shape.cols; ++c) out.data()[o++] = a.value().data()[source_index(b, r, c)];
  return make_result(std::move(out), {a}, [source_index](Node& self) {
    Node& in = *self.inputs[0];
    double* g = in.grad_buffer().data();
    const Shape& os = self.value.shape();
    std::size_t o = 0;
    for (std::size_t b = 0; b < os.batch; ++b)
      for (std::size_t r = 0; r < os.rows; ++r)
        for (std::size_t c = 0; c < os.cols; ++c) g[source_index(b, r, c)] += self.grad.data()[o++];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    total += s.dim(axis);
    if (axis == 0) s.batch = out_shape.batch;
    else if (axis == 1) s.rows = out_shape.rows;
    else s.cols = out_shape.cols;
    if (!(s == out_shape)) throw ShapeError("concat shape mismatch");
  }
  if (axis == 0) out_shape.batch = total;
  else if (axis == 1) out_shape.rows = total;
  else out_shape.cols = total;
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Shape& s = p.shape();
    const double* src = p.value().data();
    std::size_t i = 0;
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t ob = axis == 0 ? b + offset : b;
          const std::size_t orow = axis == 1 ? r + offset : r;
          const std::size_t oc = axis == 2 ? c + offset : c;
          out(ob, orow, oc) = src[i++];
        }
    offset += s.dim(axis);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs),
                     [axis, offsets = std::move(offsets)](Node& self) {
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         Node& in = *self.inputs[k];
                         if (!in.requires_grad) continue;
                         double* g = in.grad_buffer().data();
                         const Shape& s = in.value.shape();
                         const std::size_t offset = offsets[k];
                         std::size_t i = 0;
                         for (std::size_t b = 0; b < s.batch; ++b)
                           for (std::size_t r = 0; r < s.rows; ++r)
                             for (std::size_t c = 0; c < s.cols; ++c) {
                               const std::size_t ob = axis == 0 ? b + offset : b;
                               const std::size_t orow = axis == 1 ? r + offset : r;
                               const std::size_t oc = axis == 2 ? c + offset : c;
                               g[i++] += self.grad(ob, orow, oc);
                             }
                       }
                     });
}

Var embedding(const Var& table, std::span<const std::size_t> ids, std::size_t batch,
              std::size_t length) {
  const Shape& s = table.shape();
  if (s.batch != 1) throw ShapeError("embedding table must have batch 1");
  if (ids.size() != batch * length) throw ShapeError("embedding id count mismatch");
  const std::size_t dim = s.cols;
  Tensor out(Shape{batch, length, dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= s.rows) {
      throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                      std::to_string(s.rows));
    }
    std::copy_n(table.value().data() + ids[i] * dim, dim, out.data() + i * dim);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idv = std::move(idv), dim](Node& self) {
    double* g = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      const double* src = self.grad.data() + i * dim;
      double* dst = g + idv[i] * dim;
      for (std::size_t k = 0; k < dim; ++k) dst[k] += src[k];
    }
  });
}

}  // namespace regmatch::ag
