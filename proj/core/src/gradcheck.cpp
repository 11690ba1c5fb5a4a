#include "rwkvas/gradcheck.hpp"

#include <cmath>

namespace rwkvas {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

}  // namespace

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  if (!x.is_leaf()) throw StateError("finite_difference_check: x must be a leaf tensor");
  const bool had_grad = x.requires_grad();
  if (!had_grad) x.set_requires_grad(true);
  Tensor leaf = x;
  std::span<Tensor> leaves(&leaf, 1);
  const auto result = finite_difference_check([&] { return f(x); }, leaves, step);
  if (!had_grad) x.set_requires_grad(false);
  return result.max_relative_error;
}

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss, std::span<Tensor> leaves,
                                        double step) {
  for (auto& p : leaves) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw StateError("finite_difference_check: every probed tensor must be a gradient-tracking leaf");
    }
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor l = loss();
    backward(l);
  }

  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
    auto& p = leaves[ti];
    auto values = p.mutable_data();
    auto grads = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      // Divide by the step actually realized in floating point, not the nominal 2h.
      const double up = orig + step, down = orig - step;
      values[i] = up;
      const double fp = loss().item();
      values[i] = down;
      const double fm = loss().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (up - down);
      const double err = relative_error(grads[i], numeric);
      ++result.coordinates;
      if (err > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
        result.analytic = grads[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace rwkvas
