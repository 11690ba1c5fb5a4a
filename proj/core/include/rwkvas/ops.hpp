#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "rwkvas/tensor.hpp"

namespace rwkvas {

inline constexpr double kLayerNormEps = 1e-5;

// All binary ops require identical shapes. The only broadcast is tensor-with-scalar (the
// double overloads) and the explicit row-wise bias add.

Tensor matmul(const Tensor& a, const Tensor& b);
/// x·W for x of shape [in] or [T×in] and W of shape [in×out].
Tensor linear(const Tensor& x, const Tensor& weight);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);

/// Adds bias[d] to every row of x[T×d] (or to x[d]).
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Normalizes each length-d row with population variance, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);

/// Mean over positions of -log softmax(logits[t])[targets[t]].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Gathers rows of table[V×d] for each id, giving [T×d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

namespace kernels {
// Raw kernels shared by the tracked ops and fused operations elsewhere in the library.

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

inline double softplus(double x) {
  // log(1 + e^x) without overflow for large x or cancellation for very negative x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Normalizes one row. Writes the normalized values (before affine) to xhat when non-null.
/// Returns the reciprocal standard deviation.
double layer_norm_row(const double* x, const double* gamma, const double* beta, std::size_t d, double eps,
                      double* out, double* xhat);

/// Accumulates dx for one row given dy, the saved xhat and rstd. Also accumulates dgamma/dbeta
/// when non-null.
void layer_norm_row_backward(const double* dy, const double* xhat, const double* gamma, double rstd,
                             std::size_t d, double* dx, double* dgamma, double* dbeta);

/// c[m×n] += a[m×k]·b[k×n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
/// c[m×k] += g[m×n]·bᵀ where b is [k×n]
void gemm_acc_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
/// c[k×n] += aᵀ·g where a is [m×k], g is [m×n]
void gemm_acc_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n);
}  // namespace kernels

}  // namespace rwkvas
