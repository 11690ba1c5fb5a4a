#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "rwkvas/data.hpp"
#include "rwkvas/model.hpp"
#include "rwkvas/random.hpp"

namespace rwkvas {

enum class SamplingStrategy { greedy, temperature, top_k };

/// Throws ConfigError for anything other than greedy, temperature or top_k (also top-k).
SamplingStrategy parse_strategy(std::string_view name);
std::string_view strategy_name(SamplingStrategy s);

struct GenerationConfig {
  SamplingStrategy strategy = SamplingStrategy::greedy;
  double temperature = 1.0;
  int top_k = 10;
  std::uint64_t seed = 0;
  bool stop_at_eos = true;
  bool record_logits = false;
};

struct GenerationResult {
  std::vector<int> tokens;                   // new tokens only
  bool stopped_at_eos = false;
  std::vector<std::vector<double>> logits;   // logits that produced each new token, if recorded
};

/// Lowest index among the maxima.
int argmax(std::span<const double> logits);

/// Picks the next token from logits. `rng` is only consumed by the sampling strategies.
int sample_token(std::span<const double> logits, const GenerationConfig& config, Rng& rng);

/// Feeds the prompt through a decode stream, then emits up to n_tokens tokens. An EOS token
/// is included in the output and ends generation when stop_at_eos is set.
GenerationResult generate(const LanguageModel& model, std::span<const int> prompt, int n_tokens,
                          const GenerationConfig& config);

}  // namespace rwkvas
