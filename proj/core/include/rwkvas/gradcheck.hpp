#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rwkvas/tensor.hpp"

namespace rwkvas {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// The per-coordinate error is |analytic - numeric| / (|analytic| + 1e-8); the maximum is reported.
/// `x` must be a leaf. Its values are restored after probing.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = 1e-5);

/// Same check over several leaves of a closed-over loss (typically every parameter of a model).
/// Gradients of the leaves are zeroed before the analytic pass and left holding it afterwards.
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss, std::span<Tensor> leaves,
                                        double step = 1e-5);

}  // namespace rwkvas
