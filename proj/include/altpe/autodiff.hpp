#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Tensors are handles to shared nodes. Every differentiable op executed while
// gradients are enabled, with at least one input that requires a gradient,
// appends a backward closure to the calling thread's Tape. backward(loss)
// replays the tape in reverse and then clears it.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace altpe {
struct RopeCoefficients;
}

namespace altpe::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool on_tape = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Ordered record of executed ops for one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Node& out)>;

  static Tape& current();

  void record(const std::shared_ptr<Node>& out, BackwardFn fn);
  void clear();
  std::size_t size() const { return entries_.size(); }

  /// Propagates d(loss)/d(node) through every recorded op, then clears.
  void backward_from(Node& loss);

 private:
  struct Entry {
    std::shared_ptr<Node> out;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

bool grad_enabled();

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Accumulates d(loss)/d(p) into every reachable tensor that requires a gradient.
/// loss must be a scalar. A constant loss (no tape participation) is a no-op;
/// a loss whose tape was already consumed raises ContractError.
void backward(const Tensor& loss);

// ---- ops -----------------------------------------------------------------

/// [n,k] x [k,m] -> [n,m], or batched [g,n,k] x [g,k,m] -> [g,n,m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
/// x [n,m] + bias [m] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);

/// Masked additive value used for disallowed attention slots.
inline constexpr double kMaskedLogit = -1e30;

/// Row softmax over the last axis. `mask`, when defined, is a constant additive
/// tensor of shape [gm, n, m] (or [n, m]) whose leading dim divides x's; row
/// (g, i) of x uses mask row (g / (g_x / gm), i).
Tensor softmax(const Tensor& x, const Tensor& mask = {});

/// Per-row normalisation over the last axis with affine gamma/beta of width d.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Rows of table [v,d] selected by ids -> [ids.size(), d].
/// Throws DataError for an id outside [0, v).
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

/// [b*t, h*dk] -> [b*h, t, dk]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
/// [b*h, t, dk] -> [b*t, h*dk]
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

/// Applies the per-position 2x2 block transforms to x [g, t, dk] (t <= coeffs.len).
Tensor block_rotate(const Tensor& x, const RopeCoefficients& coeffs);

/// Inverted dropout. Identity (same handle) when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

/// Mean negative log-likelihood of targets under row-softmax(logits) over the
/// rows whose target differs from ignore_index. Ignored rows get zero gradient.
Tensor cross_entropy_with_ignore(const Tensor& logits, std::span<const int> targets,
                                 int ignore_index);

}  // namespace altpe::ad
