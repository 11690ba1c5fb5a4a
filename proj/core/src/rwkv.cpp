#include "rwkvas/rwkv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rwkvas/ops.hpp"
#include "rwkvas/random.hpp"

namespace rwkvas {

namespace {

constexpr std::size_t kWkvChunk = 32;

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  return Tensor::from({rows, cols}, normal_values(rng, rows * cols, stddev), true);
}

void check_wkv_inputs(const Tensor& k, const Tensor& v, const Tensor& w_eff, std::size_t rank) {
  if (k.rank() != rank || k.shape() != v.shape()) {
    throw DimensionError("wkv: K " + shape_string(k.shape()) + " and V " + shape_string(v.shape()) +
                         " must have equal shape of rank " + std::to_string(rank));
  }
  if (w_eff.rank() != 1 || w_eff.dim(0) != k.shape().back()) {
    throw DimensionError("wkv: decay " + shape_string(w_eff.shape()) + " does not match width " +
                         std::to_string(k.shape().back()));
  }
}

}  // namespace

LayerNormParams LayerNormParams::identity(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

LayerParams LayerParams::init(const ModelConfig& config, int layer_index, std::uint64_t seed) {
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);

  LayerParams p;
  p.ln_time = LayerNormParams::identity(d);
  p.ln_channel = LayerNormParams::identity(d);
  p.time.w_r = random_matrix(rng, d, d, s);
  p.time.w_k = random_matrix(rng, d, d, s);
  p.time.w_v = random_matrix(rng, d, d, s);
  p.time.w_kv = random_matrix(rng, d, d, s);

  // Effective decays spread log-uniformly over [0.02, 3] so channels cover short and long memory.
  std::vector<double> raw(d);
  for (std::size_t c = 0; c < d; ++c) {
    const double frac = d > 1 ? static_cast<double>(c) / static_cast<double>(d - 1) : 0.0;
    const double w = 0.02 * std::pow(150.0, frac);
    raw[c] = std::log(std::expm1(w));
  }
  p.time.decay_raw = Tensor::from({d}, std::move(raw), true);

  p.channel.w_k = random_matrix(rng, d, 4 * d, s);
  p.channel.w_v = random_matrix(rng, 4 * d, d, 0.5 / std::sqrt(static_cast<double>(4 * d)));
  p.channel.w_r = random_matrix(rng, d, d, s);

  if (auto enh = make_variant(config)) {
    p.enhancement = Enhancement{GateParams::init(d, enh->mode, derive_seed(seed, "gate")), enh->use_layernorm,
                                enh->carry};
  }
  (void)layer_index;
  return p;
}

WkvState WkvState::initial(std::size_t d) {
  return {Tensor::zeros({d}), Tensor::zeros({d}), Tensor::full({d}, -std::numeric_limits<double>::infinity())};
}

LayerState LayerState::initial(std::size_t d, int layer_index) {
  return {WkvState::initial(d), EnhancedHiddenState::initial(d, layer_index)};
}

Rkv project_rkv(const Tensor& x, const TimeMixParams& params) {
  return {linear(x, params.w_r), linear(x, params.w_k), linear(x, params.w_v)};
}

Tensor effective_decay(const TimeMixParams& params) { return softplus(params.decay_raw); }

Tensor wkv_parallel(const Tensor& k, const Tensor& v, const Tensor& w_eff) {
  check_wkv_inputs(k, v, w_eff, 2);
  const std::size_t T = k.dim(0), d = k.dim(1);
  if (T == 0) throw DimensionError("wkv_parallel: empty sequence");
  const auto wv = w_eff.data();
  for (double w : wv) {
    if (!(w >= 0.0)) throw std::invalid_argument("wkv_parallel: decay must be non-negative");
  }

  const double* kd = k.data().data();
  const double* vd = v.data().data();
  std::vector<double> kv(T * d);
  for (std::size_t i = 0; i < T * d; ++i) kv[i] = kd[i] * vd[i];

  const std::size_t C = std::min(kWkvChunk, T);
  // weight[j][c] = e^{-j w_c}; weight_sum[j][c] = Σ_{u<=j} weight[u][c]
  std::vector<double> weight((C + 1) * d), weight_sum((C + 1) * d);
  for (std::size_t j = 0; j <= C; ++j) {
    for (std::size_t c = 0; c < d; ++c) {
      weight[j * d + c] = std::exp(-static_cast<double>(j) * wv[c]);
      weight_sum[j * d + c] = weight[j * d + c] + (j ? weight_sum[(j - 1) * d + c] : 0.0);
    }
  }

  std::vector<double> out(T * d), den(T * d);
  std::vector<double> carry_num(d, 0.0), carry_den(d, 0.0), num(d);
  for (std::size_t s = 0; s < T; s += C) {
    const std::size_t e = std::min(T, s + C);
    for (std::size_t t = s; t < e; ++t) {
      const std::size_t lag0 = t - s;
      const double* carry_w = weight.data() + (lag0 + 1) * d;
      for (std::size_t c = 0; c < d; ++c) num[c] = carry_w[c] * carry_num[c];
      for (std::size_t i = s; i <= t; ++i) {
        const double* wrow = weight.data() + (t - i) * d;
        const double* kvrow = kv.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) num[c] += wrow[c] * kvrow[c];
      }
      const double* wsum = weight_sum.data() + lag0 * d;
      for (std::size_t c = 0; c < d; ++c) {
        const double dn = carry_w[c] * carry_den[c] + wsum[c];
        den[t * d + c] = dn;
        out[t * d + c] = num[c] / dn;
      }
      if (t + 1 == e) {
        std::copy(num.begin(), num.end(), carry_num.begin());
        std::copy(den.begin() + static_cast<std::ptrdiff_t>(t * d),
                  den.begin() + static_cast<std::ptrdiff_t>((t + 1) * d), carry_den.begin());
      }
    }
  }

  Tensor result = make_result({T, d}, std::move(out));
  if (!should_record({&k, &v, &w_eff})) return result;

  Tensor kin = k, vin = v, win = w_eff;
  active_tape()->record(result, [kin, vin, win, result, kv = std::move(kv), den = std::move(den), T, d]() mutable {
    const double* gout = result.grad().data();
    const double* outv = result.data().data();
    const auto wv = win.data();
    std::vector<double> decay(d);
    for (std::size_t c = 0; c < d; ++c) decay[c] = std::exp(-wv[c]);

    // dL/d(kv_i) = Σ_{t>=i} a^{t-i} gout_t / D_t, accumulated as a reverse scan.
    std::vector<double> acc(d, 0.0);
    const bool need_kv = kin.requires_grad() || vin.requires_grad();
    if (need_kv) {
      double* dk = kin.requires_grad() ? kin.mutable_grad().data() : nullptr;
      double* dv = vin.requires_grad() ? vin.mutable_grad().data() : nullptr;
      const double* kd = kin.data().data();
      const double* vd = vin.data().data();
      for (std::size_t t = T; t-- > 0;) {
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t idx = t * d + c;
          acc[c] = gout[idx] / den[idx] + decay[c] * acc[c];
          if (dk) dk[idx] += acc[c] * vd[idx];
          if (dv) dv[idx] += acc[c] * kd[idx];
        }
      }
    }

    if (win.requires_grad()) {
      // With M_t = Σ (t-i) a^{t-i} kv_i and E_t = Σ (t-i) a^{t-i}:
      // d out_t / d w = (out_t E_t - M_t) / D_t.
      double* dw = win.mutable_grad().data();
      std::vector<double> m(d, 0.0), e(d, 0.0), prev_num(d, 0.0), prev_den(d, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t idx = t * d + c;
          m[c] = decay[c] * (m[c] + prev_num[c]);
          e[c] = decay[c] * (e[c] + prev_den[c]);
          dw[c] += gout[idx] * (outv[idx] * e[c] - m[c]) / den[idx];
          prev_num[c] = outv[idx] * den[idx];
          prev_den[c] = den[idx];
        }
      }
    }
  });
  return result;
}

std::pair<Tensor, WkvState> wkv_step(const Tensor& k_t, const Tensor& v_t, const Tensor& w_eff,
                                     const WkvState& state) {
  check_wkv_inputs(k_t, v_t, w_eff, 1);
  const std::size_t d = k_t.numel();
  if (state.width() != d || state.den.numel() != d || state.max_exp.numel() != d) {
    throw DimensionError("wkv_step: state width " + std::to_string(state.width()) + " vs input width " +
                         std::to_string(d));
  }
  const auto kd = k_t.data(), vd = v_t.data(), wd = w_eff.data();
  const auto a = state.num.data(), b = state.den.data(), p = state.max_exp.data();
  std::vector<double> out(d), na(d), nb(d), np(d);
  for (std::size_t c = 0; c < d; ++c) {
    // Previous contributions decay by one step; the new token enters with exponent 0.
    const double decayed = p[c] - wd[c];
    const double q = std::max(decayed, 0.0);
    const double old_scale = std::exp(decayed - q);
    const double new_scale = std::exp(-q);
    na[c] = old_scale * a[c] + new_scale * (kd[c] * vd[c]);
    nb[c] = old_scale * b[c] + new_scale;
    np[c] = q;
    out[c] = na[c] / nb[c];
  }
  WkvState next{Tensor::vector(std::move(na)), Tensor::vector(std::move(nb)), Tensor::vector(std::move(np))};
  return {Tensor::vector(std::move(out)), std::move(next)};
}

Tensor time_mix_forward(const Tensor& x, const TimeMixParams& params) {
  if (x.rank() != 2) throw DimensionError("time_mix_forward: expected [T x d] input");
  const auto [r, k, v] = project_rkv(x, params);
  const Tensor wkv = wkv_parallel(k, v, effective_decay(params));
  return mul(sigmoid(r), linear(wkv, params.w_kv));
}

Tensor time_mix_step(const Tensor& x_t, const TimeMixParams& params, WkvState& state) {
  if (x_t.rank() != 1) throw DimensionError("time_mix_step: expected [d] input");
  const auto [r, k, v] = project_rkv(x_t, params);
  auto [wkv, next] = wkv_step(k, v, effective_decay(params), state);
  state = std::move(next);
  return mul(sigmoid(r), linear(wkv, params.w_kv));
}

Tensor channel_mix_forward(const Tensor& x, const ChannelMixParams& params) {
  const Tensor receptance = sigmoid(linear(x, params.w_r));
  const Tensor hidden = square(relu(linear(x, params.w_k)));
  return mul(receptance, linear(hidden, params.w_v));
}

Tensor block_forward(const Tensor& x, const LayerParams& params) {
  if (x.rank() != 2 || x.dim(1) != params.hidden_dim()) {
    throw DimensionError("block_forward: input " + shape_string(x.shape()) + " vs width " +
                         std::to_string(params.hidden_dim()));
  }
  Tensor h = time_mix_forward(layer_norm(x, params.ln_time.gamma, params.ln_time.beta), params.time);
  if (params.enhancement) {
    const auto& enh = *params.enhancement;
    h = adaptive_shift_sequence(h, enh.gate, enh.use_layernorm, enh.carry);
  }
  const Tensor mid = add(x, h);
  return add(mid, channel_mix_forward(layer_norm(mid, params.ln_channel.gamma, params.ln_channel.beta),
                                      params.channel));
}

Tensor block_step(const Tensor& x_t, const LayerParams& params, LayerState& state) {
  if (x_t.rank() != 1 || x_t.dim(0) != params.hidden_dim()) {
    throw DimensionError("block_step: input " + shape_string(x_t.shape()) + " vs width " +
                         std::to_string(params.hidden_dim()));
  }
  Tensor h = time_mix_step(layer_norm(x_t, params.ln_time.gamma, params.ln_time.beta), params.time, state.wkv);
  if (params.enhancement) {
    const auto& enh = *params.enhancement;
    auto [final_h, next] = adaptive_shift_forward(h, state.shift, enh.gate, enh.use_layernorm, enh.carry);
    h = std::move(final_h);
    state.shift = std::move(next);
  }
  const Tensor mid = add(x_t, h);
  return add(mid, channel_mix_forward(layer_norm(mid, params.ln_channel.gamma, params.ln_channel.beta),
                                      params.channel));
}

Tensor block_forward_recurrent(const Tensor& x, const LayerParams& params, LayerState& state) {
  if (x.rank() != 2) throw DimensionError("block_forward_recurrent: expected [T x d] input");
  const std::size_t T = x.dim(0), d = x.dim(1);
  std::vector<double> out(T * d);
  const auto xv = x.data();
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor row = Tensor::vector(std::vector<double>(xv.begin() + static_cast<std::ptrdiff_t>(t * d),
                                                          xv.begin() + static_cast<std::ptrdiff_t>((t + 1) * d)));
    const Tensor y = block_step(row, params, state);
    std::copy(y.data().begin(), y.data().end(), out.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  return Tensor::from({T, d}, std::move(out));
}

}  // namespace rwkvas
