#include "rwkvas/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "rwkvas/random.hpp"

namespace rwkvas {

SamplingStrategy parse_strategy(std::string_view name) {
  if (name == "greedy") return SamplingStrategy::greedy;
  if (name == "temperature") return SamplingStrategy::temperature;
  if (name == "top_k" || name == "top-k") return SamplingStrategy::top_k;
  throw ConfigError("unknown sampling strategy '" + std::string(name) + "' (expected greedy, temperature or top_k)");
}

std::string_view strategy_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::greedy:
      return "greedy";
    case SamplingStrategy::temperature:
      return "temperature";
    case SamplingStrategy::top_k:
      return "top_k";
  }
  throw ConfigError("invalid sampling strategy");
}

int argmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax of empty logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

namespace {

int sample_from(std::span<const double> logits, std::span<const int> candidates, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (int c : candidates) mx = std::max(mx, logits[static_cast<std::size_t>(c)]);
  std::vector<double> weights(candidates.size());
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    weights[i] = std::exp((logits[static_cast<std::size_t>(candidates[i])] - mx) / temperature);
    total += weights[i];
  }
  std::uniform_real_distribution<double> uniform(0.0, total);
  const double u = uniform(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    acc += weights[i];
    if (u < acc) return candidates[i];
  }
  // u == total can only happen through rounding; fall back to the last positive weight.
  for (std::size_t i = candidates.size(); i-- > 0;)
    if (weights[i] > 0.0) return candidates[i];
  return candidates.front();
}

}  // namespace

int sample_token(std::span<const double> logits, const GenerationConfig& config, Rng& rng) {
  switch (config.strategy) {
    case SamplingStrategy::greedy:
      return argmax(logits);
    case SamplingStrategy::temperature: {
      std::vector<int> all(logits.size());
      std::iota(all.begin(), all.end(), 0);
      return sample_from(logits, all, config.temperature, rng);
    }
    case SamplingStrategy::top_k: {
      if (config.top_k < 1) throw ConfigError("top_k must be >= 1");
      std::vector<int> order(logits.size());
      std::iota(order.begin(), order.end(), 0);
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(config.top_k), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), [&](int a, int b) {
        const double la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
        return la > lb || (la == lb && a < b);
      });
      order.resize(k);
      return sample_from(logits, order, config.temperature, rng);
    }
  }
  throw ConfigError("unknown sampling strategy");
}

GenerationResult generate(const LanguageModel& model, std::span<const int> prompt, int n_tokens,
                          const GenerationConfig& config) {
  if (prompt.empty()) throw std::invalid_argument("generate: prompt must not be empty");
  if (n_tokens < 1) throw std::invalid_argument("generate: n_tokens must be >= 1");
  (void)strategy_name(config.strategy);

  Rng rng(derive_seed(config.seed, "sample"));
  auto stream = model.open_stream();
  std::vector<double> logits;
  for (int t : prompt) logits = stream->step(t);

  GenerationResult result;
  for (int i = 0; i < n_tokens; ++i) {
    const int next = sample_token(logits, config, rng);
    if (config.record_logits) result.logits.push_back(logits);
    result.tokens.push_back(next);
    if (config.stop_at_eos && next == kEosToken) {
      result.stopped_at_eos = true;
      break;
    }
    if (i + 1 < n_tokens) logits = stream->step(next);
  }
  return result;
}

}  // namespace rwkvas
