#include "rwkvas/config.hpp"

namespace rwkvas {

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "enhanced") return Variant::enhanced;
  if (name == "no-layernorm" || name == "no_layernorm") return Variant::no_layernorm;
  if (name == "fixed-gate" || name == "fixed_gate") return Variant::fixed_gate;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected baseline, enhanced, no-layernorm or fixed-gate)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::enhanced:
      return "enhanced";
    case Variant::no_layernorm:
      return "no-layernorm";
    case Variant::fixed_gate:
      return "fixed-gate";
  }
  throw ConfigError("invalid variant value");
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (hidden_dim < 2) throw ConfigError("hidden_dim must be >= 2");
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (context_len < 1) throw ConfigError("context_len must be >= 1");
  (void)variant_name(variant);
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.num_layers == b.num_layers && a.hidden_dim == b.hidden_dim && a.vocab_size == b.vocab_size &&
         a.variant == b.variant && a.seed == b.seed && a.context_len == b.context_len;
}

}  // namespace rwkvas
