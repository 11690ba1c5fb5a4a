#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rwkvas {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Model family member. `baseline` has no enhancement path at all; the other three add the
/// gated token shift after time-mixing with differing gate/normalization behavior.
enum class Variant { baseline, enhanced, no_layernorm, fixed_gate };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::baseline, Variant::enhanced,
                                                        Variant::no_layernorm, Variant::fixed_gate};

/// Accepts both the CLI spelling (`no-layernorm`) and the identifier spelling (`no_layernorm`).
Variant parse_variant(std::string_view name);
/// CLI spelling.
std::string_view variant_name(Variant v);

struct ModelConfig {
  int num_layers = 2;
  int hidden_dim = 32;
  int vocab_size = 0;
  Variant variant = Variant::enhanced;
  std::uint64_t seed = 0;
  int context_len = 128;

  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

}  // namespace rwkvas
