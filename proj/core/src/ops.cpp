#include "rwkvas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace rwkvas {

namespace kernels {

double layer_norm_row(const double* x, const double* gamma, const double* beta, std::size_t d, double eps,
                      double* out, double* xhat) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) {
    const double n = (x[i] - mean) * rstd;
    if (xhat) xhat[i] = n;
    out[i] = n * gamma[i] + beta[i];
  }
  return rstd;
}

void layer_norm_row_backward(const double* dy, const double* xhat, const double* gamma, double rstd,
                             std::size_t d, double* dx, double* dgamma, double* dbeta) {
  double mean_dn = 0.0;
  double mean_dn_n = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dn = dy[i] * gamma[i];
    mean_dn += dn;
    mean_dn_n += dn * xhat[i];
    if (dgamma) dgamma[i] += dy[i] * xhat[i];
    if (dbeta) dbeta[i] += dy[i];
  }
  mean_dn /= static_cast<double>(d);
  mean_dn_n /= static_cast<double>(d);
  if (!dx) return;
  for (std::size_t i = 0; i < d; ++i) {
    const double dn = dy[i] * gamma[i];
    dx[i] += rstd * (dn - mean_dn - xhat[i] * mean_dn_n);
  }
}

void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_acc_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

void gemm_acc_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace kernels

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Elementwise unary op. `deriv(x, y)` returns dy/dx from the input and output values.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  auto in = a.data();
  std::vector<double> out_vals(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out_vals[i] = fwd(in[i]);
  Tensor out = make_result(a.shape(), std::move(out_vals));
  if (should_record({&a})) {
    Tensor x = a;
    active_tape()->record(out, [x, out, deriv]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto yv = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: both operands must be matrices");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  kernels::gemm_acc(a.data().data(), b.data().data(), c.data(), m, k, n);
  Tensor out = make_result({m, n}, std::move(c));
  if (should_record({&a, &b})) {
    Tensor x = a, y = b;
    active_tape()->record(out, [x, y, out, m, k, n]() mutable {
      const double* g = out.grad().data();
      if (x.requires_grad()) kernels::gemm_acc_nt(g, y.data().data(), x.mutable_grad().data(), m, k, n);
      if (y.requires_grad()) kernels::gemm_acc_tn(x.data().data(), g, y.mutable_grad().data(), m, k, n);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be a matrix");
  if (x.rank() == 1) {
    if (x.dim(0) != weight.dim(0)) {
      throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                           shape_string(weight.shape()));
    }
    return matmul(x.reshape({1, x.dim(0)}), weight).reshape({weight.dim(1)});
  }
  return matmul(x, weight);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.data(), bv = b.data();
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] + bv[i];
  Tensor out = make_result(a.shape(), std::move(c));
  if (should_record({&a, &b})) {
    Tensor x = a, y = b;
    active_tape()->record(out, [x, y, out]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (y.requires_grad()) {
        auto gy = y.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.data(), bv = b.data();
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] - bv[i];
  Tensor out = make_result(a.shape(), std::move(c));
  if (should_record({&a, &b})) {
    Tensor x = a, y = b;
    active_tape()->record(out, [x, y, out]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (y.requires_grad()) {
        auto gy = y.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.data(), bv = b.data();
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] * bv[i];
  Tensor out = make_result(a.shape(), std::move(c));
  if (should_record({&a, &b})) {
    Tensor x = a, y = b;
    active_tape()->record(out, [x, y, out]() mutable {
      auto g = out.grad();
      auto xv = x.data(), yv = y.data();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
      }
      if (y.requires_grad()) {
        auto gy = y.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * xv[i];
      }
    });
  }
  return out;
}

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor add(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1) throw DimensionError("add_bias: bias must be a vector");
  const std::size_t d = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != d || x.rank() > 2) {
    throw DimensionError("add_bias: input " + shape_string(x.shape()) + " vs bias " + shape_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.data(), bv = bias.data();
  std::vector<double> c(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) c[r * d + j] = xv[r * d + j] + bv[j];
  Tensor out = make_result(x.shape(), std::move(c));
  if (should_record({&x, &bias})) {
    Tensor in = x, b = bias;
    active_tape()->record(out, [in, b, out, rows, d]() mutable {
      auto g = out.grad();
      if (in.requires_grad()) {
        auto gi = in.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) { return kernels::sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, [](double v) { return kernels::softplus(v); }, [](double v, double) { return kernels::sigmoid(v); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (gamma.rank() != 1 || beta.shape() != gamma.shape()) {
    throw DimensionError("layer_norm: gamma/beta must be equal-length vectors");
  }
  const std::size_t d = gamma.dim(0);
  if (d == 0 || x.rank() == 0 || x.rank() > 2 || x.shape().back() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + " vs gamma " +
                         shape_string(gamma.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const bool track = should_record({&x, &gamma, &beta});
  std::vector<double> out_vals(x.numel());
  std::vector<double> xhat(track ? x.numel() : 0);
  std::vector<double> rstd(track ? rows : 0);
  const double* xv = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = kernels::layer_norm_row(xv + r * d, gamma.data().data(), beta.data().data(), d, eps,
                                             out_vals.data() + r * d, track ? xhat.data() + r * d : nullptr);
    if (track) rstd[r] = s;
  }
  Tensor out = make_result(x.shape(), std::move(out_vals));
  if (track) {
    Tensor in = x, g = gamma, b = beta;
    active_tape()->record(out, [in, g, b, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
      const double* gy = out.grad().data();
      double* dx = in.requires_grad() ? in.mutable_grad().data() : nullptr;
      double* dg = g.requires_grad() ? g.mutable_grad().data() : nullptr;
      double* db = b.requires_grad() ? b.mutable_grad().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        kernels::layer_norm_row_backward(gy + r * d, xhat.data() + r * d, g.data().data(), rstd[r], d,
                                         dx ? dx + r * d : nullptr, dg, db);
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be [T x V]");
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  if (targets.size() != T) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(T) + " positions");
  }
  if (T == 0) throw DimensionError("softmax_cross_entropy: empty sequence");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(V) + ")");
    }
  }
  const double* lv = logits.data().data();
  const bool track = should_record({&logits});
  std::vector<double> probs(track ? T * V : 0);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = lv + t * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[t]];
    if (track) {
      for (std::size_t j = 0; j < V; ++j) probs[t * V + j] = std::exp(row[j] - lse);
    }
  }
  Tensor out = make_result({}, {total / static_cast<double>(T)});
  if (track) {
    Tensor in = logits;
    std::vector<int> tg(targets.begin(), targets.end());
    active_tape()->record(out, [in, out, probs = std::move(probs), tg = std::move(tg), T, V]() mutable {
      const double scale = out.grad()[0] / static_cast<double>(T);
      auto gl = in.mutable_grad();
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < V; ++j) gl[t * V + j] += scale * probs[t * V + j];
        gl[t * V + static_cast<std::size_t>(tg[t])] -= scale;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = make_result({}, {s});
  if (should_record({&x})) {
    Tensor in = x;
    active_tape()->record(out, [in, out]() mutable {
      const double g = out.grad()[0];
      for (double& v : in.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be [V x d]");
  const std::size_t V = table.dim(0), d = table.dim(1);
  std::vector<double> rows(ids.size() * d);
  auto tv = table.data();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const int id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw IndexError("embedding: token id " + std::to_string(id) + " outside [0, " + std::to_string(V) + ")");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * d), d,
                rows.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  Tensor out = make_result({ids.size(), d}, std::move(rows));
  if (should_record({&table})) {
    Tensor tab = table;
    std::vector<int> idv(ids.begin(), ids.end());
    active_tape()->record(out, [tab, out, idv = std::move(idv), d]() mutable {
      auto g = out.grad();
      auto gt = tab.mutable_grad();
      for (std::size_t t = 0; t < idv.size(); ++t)
        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idv[t]) * d + j] += g[t * d + j];
    });
  }
  return out;
}

}  // namespace rwkvas
