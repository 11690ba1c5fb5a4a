#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace rwkvas {

/// Deterministic seed for a named stream ("init", "split", "sample", ...) of a base seed, so
/// that enabling or disabling one stage never shifts another stage's randomness.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);

using Rng = std::mt19937_64;

std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev);
std::vector<double> uniform_values(Rng& rng, std::size_t n, double lo, double hi);

}  // namespace rwkvas
