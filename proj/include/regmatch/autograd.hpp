#pragma once

// Reverse-mode automatic differentiation over batched matrices.
//
// Every op takes and returns `Var`, a shared handle on a graph node that
// stores the forward value and (after `backward`) the accumulated gradient.
// Ops only record a backward closure when gradient recording is enabled and
// at least one input requires a gradient, so inference under `NoGradGuard`
// runs the exact same arithmetic without graph overhead.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "regmatch/tensor.hpp"

namespace regmatch::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  void zero_grad() { node_->grad = Tensor(); }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Seeds d(this)/d(this) = 1; requires a single-element value.
  void backward() const;
  void backward(const Tensor& seed) const;

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// While a probe is alive on the current thread, every non-smooth op (relu,
// clamp, norm floor, hinge) reports how far its input sits from the kink.
// Gradient audits use this to reject probes that a finite-difference step
// could push across a kink. Each report also carries the branch taken; the
// ordered branches hash into a signature that changes when any kink is
// crossed.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  double min_distance() const noexcept { return min_distance_; }
  std::uint64_t signature() const noexcept { return signature_; }
  void note(double distance, std::uint64_t branch) noexcept;

 private:
  KinkProbe* previous_;
  double min_distance_;
  std::uint64_t signature_ = 1469598103934665603ULL;
};

void note_kink(double distance, std::uint64_t branch = 0) noexcept;
bool kink_probe_active() noexcept;

// Builds a result node. `backward` is only kept when recording is on and an
// input needs gradients.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Elementwise, broadcasting any axis of extent 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var shift(const Var& a, double offset);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var square(const Var& a);
Var sqrt(const Var& a);

// Batched matrix product; a batch extent of 1 broadcasts.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);

// Selects batch entries: out[p] = a[index[p]].
Var gather(const Var& a, std::span<const std::size_t> index);

// Reductions keep the reduced axis with extent 1.
Var sum(const Var& a, int axis);

// Softmax along `axis`. Entries where `mask` is 0 get weight exactly 0; the
// mask broadcasts like an elementwise operand. A line with no unmasked entry
// is a domain error.
Var softmax(const Var& a, int axis, const Tensor* mask = nullptr);

// x / max(||x||, floor) along `axis`. With floor = 0, an exactly zero line maps
// to zero with zero gradient.
Var l2_normalize(const Var& a, int axis, double floor);

Var reshape(const Var& a, Shape shape);
Var slice(const Var& a, int axis, std::size_t start, std::size_t length);
Var concat(std::span<const Var> parts, int axis);

// table is [1 x vocab x dim]; ids are batch-major [batch x length].
Var embedding(const Var& table, std::span<const std::size_t> ids, std::size_t batch,
              std::size_t length);

// Broadcasts `mask` to `shape` (same rules as elementwise ops).
Tensor expand(const Tensor& mask, const Shape& shape);

}  // namespace regmatch::ag
