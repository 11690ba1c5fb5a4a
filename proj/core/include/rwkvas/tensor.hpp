#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwkvas {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  Tape* tape = nullptr;
  std::size_t node = 0;
};
}  // namespace detail

/// Dense row-major float64 array. Copies share storage; use clone() for a deep copy.
///
/// A tensor either is a leaf (a parameter or a constant) or was produced by an operation
/// recorded on a Tape. Leaves with requires_grad accumulate gradients across backward calls.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access. Only parameter updates and finite-difference probes should use this.
  std::span<double> mutable_data() { return impl_->data; }
  std::vector<double> to_vector() const { return impl_->data; }

  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  bool requires_grad() const { return impl_->requires_grad; }
  /// Only valid on leaves.
  void set_requires_grad(bool on);
  void zero_grad();

  bool is_leaf() const { return impl_->tape == nullptr; }
  /// Tape that recorded this tensor, or nullptr for leaves.
  Tape* producer() const { return impl_->tape; }
  bool all_finite() const;

  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t row, std::size_t col) const;

  /// Deep copy of the values as a fresh untracked leaf.
  Tensor clone() const;
  /// Same values viewed under another shape (copy for leaves, tracked pass-through otherwise).
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>);
};

/// Creates an untracked result tensor. Ops call record() on it when they need a backward rule.
Tensor make_result(Shape shape, std::vector<double> values);

/// Ordered record of differentiable operations for one forward pass.
///
/// Nodes are appended in execution order, so the node list is already topologically sorted.
/// backward() walks it once from the loss node down to the first node.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Attaches `output` to this tape with the given backward rule. The rule reads output.grad()
  /// and accumulates into the gradients of the inputs it captured.
  void record(Tensor& output, std::function<void()> backward_rule);

  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor output;
    std::function<void()> backward_rule;
  };
  std::vector<Node> nodes_;
};

/// Makes `tape` the recording target on the calling thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

/// Suspends recording on the calling thread for the scope's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
  ~NoGradScope();

 private:
  Tape* previous_;
};

Tape* active_tape();

/// True when an active tape exists and any of the inputs requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Runs reverse-mode differentiation from a scalar loss recorded on a tape.
void backward(const Tensor& loss);

}  // namespace rwkvas
