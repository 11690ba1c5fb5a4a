#include "rwkvas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rwkvas {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->shape = {};
  impl_->data = {0.0};
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  Tensor t(std::move(impl));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for shape " + shape_string(shape()));
  return impl_->shape[axis];
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_->requires_grad) throw StateError("tensor does not track gradients");
  return impl_->grad;
}

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw StateError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->data.size(), 0.0);
  } else {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) requires a matrix");
  return impl_->data[row * impl_->shape[1] + col];
}

Tensor Tensor::clone() const { return from(shape(), impl_->data, false); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
  }
  Tensor out = make_result(std::move(shape), impl_->data);
  if (should_record({this})) {
    Tensor in = *this;
    active_tape()->record(out, [in, out]() mutable {
      auto g = out.grad();
      auto gi = in.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
  }
  return out;
}

Tensor make_result(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tape::~Tape() { clear(); }

void Tape::record(Tensor& output, std::function<void()> backward_rule) {
  auto& impl = *output.impl_;
  if (impl.tape != nullptr) throw StateError("tensor is already recorded on a tape");
  impl.requires_grad = true;
  impl.grad.assign(impl.data.size(), 0.0);
  impl.tape = this;
  impl.node = nodes_.size();
  nodes_.push_back(Node{output, std::move(backward_rule)});
}

void Tape::backward(const Tensor& loss) {
  const auto& impl = *loss.impl_;
  if (impl.tape != this) throw StateError("loss was not produced by this tape");
  if (loss.numel() != 1) throw DimensionError("backward() requires a scalar loss");
  const std::size_t last = impl.node;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output.zero_grad();
  nodes_[last].output.impl_->grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) nodes_[i].backward_rule();
}

void Tape::clear() {
  // Detach outputs so tensors that outlive the tape become plain constants.
  for (auto& node : nodes_) {
    auto& impl = *node.output.impl_;
    impl.tape = nullptr;
    impl.requires_grad = false;
    impl.grad.clear();
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void backward(const Tensor& loss) {
  if (loss.producer() == nullptr) {
    throw StateError("backward() called on a tensor that was not produced by a recorded operation");
  }
  loss.producer()->backward(loss);
}

}  // namespace rwkvas
