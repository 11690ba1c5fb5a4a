#pragma once

#include <optional>
#include <utility>

#include "rwkvas/config.hpp"
#include "rwkvas/tensor.hpp"

namespace rwkvas {

/// adaptive: g = sigmoid(h·W_g + b_g). fixed_one: g = 1. bypass: g = 0 (shift disabled).
enum class GateMode { adaptive, fixed_one, bypass };

/// Which vector is carried forward as the next step's predecessor.
enum class ShiftCarry { enhanced_output, raw_input };

#ifdef RWKVAS_CARRY_PRE_ENHANCEMENT
inline constexpr ShiftCarry kDefaultShiftCarry = ShiftCarry::raw_input;
#else
inline constexpr ShiftCarry kDefaultShiftCarry = ShiftCarry::enhanced_output;
#endif

struct GateParams {
  Tensor w_g;       // [d x d]
  Tensor b_g;       // [d]
  Tensor ln_gamma;  // [d]
  Tensor ln_beta;   // [d]
  GateMode mode = GateMode::adaptive;

  /// W_g ~ N(0, weight_scale^2), b_g = bias_init, identity LayerNorm affine.
  static GateParams init(std::size_t d, GateMode mode, std::uint64_t seed, double weight_scale = 0.01,
                         double bias_init = 1.0);
};

struct EnhancementConfig {
  GateMode mode = GateMode::adaptive;
  bool use_layernorm = true;
  ShiftCarry carry = kDefaultShiftCarry;
};

/// Per-stream state of one layer's shift: h_prev is zero at sequence start.
struct EnhancedHiddenState {
  Tensor h_prev;
  int layer_index = 0;

  static EnhancedHiddenState initial(std::size_t d, int layer_index = 0);
};

/// Enhancement behavior for a variant; nullopt for the baseline.
std::optional<EnhancementConfig> make_variant(const ModelConfig& config);

/// Gate values for h of shape [d] or [T×d].
Tensor gate_forward(const Tensor& h, const GateParams& params);

/// One step: final = LN(h_t + h_prev ⊙ g_t) (LN skipped when use_layernorm is false).
std::pair<Tensor, EnhancedHiddenState> adaptive_shift_forward(const Tensor& h_t, const EnhancedHiddenState& state,
                                                              const GateParams& params, bool use_layernorm,
                                                              ShiftCarry carry = kDefaultShiftCarry);

/// Applies the shift over a whole sequence h[T×d] starting from a zero predecessor.
///
/// The recurrence runs inside one fused tracked operation with a hand-written reverse pass;
/// it produces the same values as iterating adaptive_shift_forward row by row.
Tensor adaptive_shift_sequence(const Tensor& h, const GateParams& params, bool use_layernorm,
                               ShiftCarry carry = kDefaultShiftCarry);

}  // namespace rwkvas
