#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "rwkvas/config.hpp"
#include "rwkvas/gate.hpp"
#include "rwkvas/tensor.hpp"

namespace rwkvas {

// Weight matrices are stored [in x out] and applied as x·W, i.e. the linear map W applied to x.

struct TimeMixParams {
  Tensor w_r, w_k, w_v;  // [d x d]
  Tensor decay_raw;      // [d], effective decay = softplus(decay_raw) >= 0
  Tensor w_kv;           // [d x d] output projection of the normalized weighted sum
};

struct ChannelMixParams {
  Tensor w_k;  // [d x 4d]
  Tensor w_v;  // [4d x d]
  Tensor w_r;  // [d x d]
};

struct LayerNormParams {
  Tensor gamma, beta;
  static LayerNormParams identity(std::size_t d);
};

struct Enhancement {
  GateParams gate;
  bool use_layernorm = true;
  ShiftCarry carry = kDefaultShiftCarry;
};

struct LayerParams {
  LayerNormParams ln_time;
  TimeMixParams time;
  LayerNormParams ln_channel;
  ChannelMixParams channel;
  std::optional<Enhancement> enhancement;  // absent for the baseline

  std::size_t hidden_dim() const { return time.decay_raw.numel(); }

  /// Random initialization for one layer of `config`.
  static LayerParams init(const ModelConfig& config, int layer_index, std::uint64_t seed);
};

/// Running accumulators of the decayed weighted sum in max-shifted form:
/// true numerator = num·e^{max_exp}, true denominator = den·e^{max_exp}.
struct WkvState {
  Tensor num;
  Tensor den;
  Tensor max_exp;

  static WkvState initial(std::size_t d);
  std::size_t width() const { return num.numel(); }
};

struct LayerState {
  WkvState wkv;
  EnhancedHiddenState shift;

  static LayerState initial(std::size_t d, int layer_index = 0);
};

struct Rkv {
  Tensor r, k, v;
};

/// R = W_r·x, K = W_k·x, V = W_v·x for x of shape [d] or [T×d].
Rkv project_rkv(const Tensor& x, const TimeMixParams& params);

/// softplus(decay_raw)
Tensor effective_decay(const TimeMixParams& params);

/// out[t] = Σ_{i≤t} e^{-(t-i)w} K_i⊙V_i / Σ_{i≤t} e^{-(t-i)w}, for K, V of shape [T×d].
///
/// Evaluated chunk-parallel: exact pairwise weights inside each chunk, carried sums between
/// chunks. Requires w_eff >= 0, so every weight is at most e^0 = 1 and the per-row exponent
/// maximum (attained at i = t) is already zero.
Tensor wkv_parallel(const Tensor& k, const Tensor& v, const Tensor& w_eff);

/// One recurrent step. Returns the step output and the updated state. Not differentiable.
std::pair<Tensor, WkvState> wkv_step(const Tensor& k_t, const Tensor& v_t, const Tensor& w_eff,
                                     const WkvState& state);

/// h_t = sigmoid(R_t) ⊙ (W_kv · wkv_t) over a whole sequence x[T×d].
Tensor time_mix_forward(const Tensor& x, const TimeMixParams& params);
Tensor time_mix_step(const Tensor& x_t, const TimeMixParams& params, WkvState& state);

/// sigmoid(W_r·x) ⊙ (W_v · relu(W_k·x)²), row-wise for x of shape [d] or [T×d].
Tensor channel_mix_forward(const Tensor& x, const ChannelMixParams& params);

/// x + shift(time_mix(LN(x))) then + channel_mix(LN(·)). The shift exists only when the layer
/// carries an enhancement.
Tensor block_forward(const Tensor& x, const LayerParams& params);
Tensor block_step(const Tensor& x_t, const LayerParams& params, LayerState& state);
/// Stepwise evaluation of a full sequence, row by row, threading `state`.
Tensor block_forward_recurrent(const Tensor& x, const LayerParams& params, LayerState& state);

}  // namespace rwkvas
