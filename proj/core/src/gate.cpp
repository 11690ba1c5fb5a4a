#include "rwkvas/gate.hpp"

#include <algorithm>
#include <vector>

#include "rwkvas/ops.hpp"
#include "rwkvas/random.hpp"

namespace rwkvas {

GateParams GateParams::init(std::size_t d, GateMode mode, std::uint64_t seed, double weight_scale,
                            double bias_init) {
  Rng rng(seed);
  GateParams p;
  p.w_g = Tensor::from({d, d}, normal_values(rng, d * d, weight_scale), true);
  p.b_g = Tensor::full({d}, bias_init, true);
  p.ln_gamma = Tensor::full({d}, 1.0, true);
  p.ln_beta = Tensor::zeros({d}, true);
  p.mode = mode;
  return p;
}

EnhancedHiddenState EnhancedHiddenState::initial(std::size_t d, int layer_index) {
  return EnhancedHiddenState{Tensor::zeros({d}), layer_index};
}

std::optional<EnhancementConfig> make_variant(const ModelConfig& config) {
  switch (config.variant) {
    case Variant::baseline:
      return std::nullopt;
    case Variant::enhanced:
      return EnhancementConfig{GateMode::adaptive, true, kDefaultShiftCarry};
    case Variant::no_layernorm:
      return EnhancementConfig{GateMode::adaptive, false, kDefaultShiftCarry};
    case Variant::fixed_gate:
      return EnhancementConfig{GateMode::fixed_one, true, kDefaultShiftCarry};
  }
  throw ConfigError("make_variant: unknown variant");
}

Tensor gate_forward(const Tensor& h, const GateParams& params) {
  const std::size_t d = params.b_g.numel();
  if (h.rank() == 0 || h.rank() > 2 || h.shape().back() != d) {
    throw DimensionError("gate_forward: hidden state " + shape_string(h.shape()) + " vs gate width " +
                         std::to_string(d));
  }
  switch (params.mode) {
    case GateMode::adaptive: {
      if (should_record({&h, &params.w_g, &params.b_g})) return sigmoid(add_bias(linear(h, params.w_g), params.b_g));
      // Inference path: bias, product and sigmoid in one buffer.
      const std::size_t rows = h.rank() == 2 ? h.dim(0) : 1;
      const auto bias = params.b_g.data();
      std::vector<double> g(rows * d);
      for (std::size_t r = 0; r < rows; ++r) std::copy(bias.begin(), bias.end(), g.begin() + static_cast<std::ptrdiff_t>(r * d));
      kernels::gemm_acc(h.data().data(), params.w_g.data().data(), g.data(), rows, d, d);
      for (double& v : g) v = kernels::sigmoid(v);
      return Tensor::from(h.shape(), std::move(g));
    }
    case GateMode::fixed_one:
      return Tensor::full(h.shape(), 1.0);
    case GateMode::bypass:
      return Tensor::zeros(h.shape());
  }
  throw ConfigError("gate_forward: unknown gate mode");
}

std::pair<Tensor, EnhancedHiddenState> adaptive_shift_forward(const Tensor& h_t, const EnhancedHiddenState& state,
                                                              const GateParams& params, bool use_layernorm,
                                                              ShiftCarry carry) {
  if (h_t.rank() != 1 || state.h_prev.shape() != h_t.shape()) {
    throw DimensionError("adaptive_shift_forward: h_t " + shape_string(h_t.shape()) + " vs h_prev " +
                         shape_string(state.h_prev.shape()));
  }
  const Tensor g = gate_forward(h_t, params);
  const Tensor shifted = mul(state.h_prev, g);
  const Tensor enhanced = add(h_t, shifted);
  Tensor final_h = use_layernorm ? layer_norm(enhanced, params.ln_gamma, params.ln_beta) : enhanced;
  EnhancedHiddenState next{carry == ShiftCarry::enhanced_output ? final_h : h_t, state.layer_index};
  return {std::move(final_h), std::move(next)};
}

Tensor adaptive_shift_sequence(const Tensor& h, const GateParams& params, bool use_layernorm, ShiftCarry carry) {
  if (h.rank() != 2) throw DimensionError("adaptive_shift_sequence: expected [T x d] hidden states");
  const std::size_t T = h.dim(0), d = h.dim(1);
  const Tensor g = gate_forward(h, params);
  const Tensor& gamma = params.ln_gamma;
  const Tensor& beta = params.ln_beta;

  const bool track = should_record({&h, &g, &gamma, &beta});
  const double* hv = h.data().data();
  const double* gv = g.data().data();
  std::vector<double> out(T * d);
  // Saved for the reverse pass: predecessor used at each step, normalized values and rstd.
  std::vector<double> prev(track ? T * d : 0);
  std::vector<double> xhat(track && use_layernorm ? T * d : 0);
  std::vector<double> rstd(track && use_layernorm ? T : 0);

  std::vector<double> carry_vec(d, 0.0);
  std::vector<double> enhanced(d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* ht = hv + t * d;
    const double* gt = gv + t * d;
    double* ft = out.data() + t * d;
    if (track) std::copy(carry_vec.begin(), carry_vec.end(), prev.begin() + static_cast<std::ptrdiff_t>(t * d));
    for (std::size_t j = 0; j < d; ++j) {
      const double shifted = carry_vec[j] * gt[j];
      enhanced[j] = ht[j] + shifted;
    }
    if (use_layernorm) {
      const double s = kernels::layer_norm_row(enhanced.data(), gamma.data().data(), beta.data().data(), d,
                                               kLayerNormEps, ft, track ? xhat.data() + t * d : nullptr);
      if (track) rstd[t] = s;
    } else {
      std::copy(enhanced.begin(), enhanced.end(), ft);
    }
    if (carry == ShiftCarry::enhanced_output) {
      std::copy(ft, ft + d, carry_vec.begin());
    } else {
      std::copy(ht, ht + d, carry_vec.begin());
    }
  }

  Tensor result = make_result({T, d}, std::move(out));
  if (!track) return result;

  Tensor hin = h, gin = g, gam = gamma, bet = beta;
  active_tape()->record(result, [hin, gin, gam, bet, result, prev = std::move(prev), xhat = std::move(xhat),
                                 rstd = std::move(rstd), T, d, use_layernorm, carry]() mutable {
    const double* gout = result.grad().data();
    const double* gv = gin.data().data();
    double* dh = hin.requires_grad() ? hin.mutable_grad().data() : nullptr;
    double* dg = gin.requires_grad() ? gin.mutable_grad().data() : nullptr;
    double* dgamma = use_layernorm && gam.requires_grad() ? gam.mutable_grad().data() : nullptr;
    double* dbeta = use_layernorm && bet.requires_grad() ? bet.mutable_grad().data() : nullptr;

    std::vector<double> dcarry(d, 0.0);  // d loss / d predecessor carried out of step t
    std::vector<double> df(d), de(d);
    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t j = 0; j < d; ++j) {
        df[j] = gout[t * d + j] + (carry == ShiftCarry::enhanced_output ? dcarry[j] : 0.0);
      }
      if (use_layernorm) {
        std::fill(de.begin(), de.end(), 0.0);
        kernels::layer_norm_row_backward(df.data(), xhat.data() + t * d, gam.data().data(), rstd[t], d, de.data(),
                                         dgamma, dbeta);
      } else {
        de = df;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t k = t * d + j;
        if (dh) dh[k] += de[j] + (carry == ShiftCarry::raw_input ? dcarry[j] : 0.0);
        if (dg) dg[k] += de[j] * prev[k];
        dcarry[j] = de[j] * gv[k];
      }
    }
  });
  return result;
}

}  // namespace rwkvas
