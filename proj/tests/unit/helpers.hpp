#pragma once

#include <cstdint>
#include <string>

#include "rwkvas/model.hpp"
#include "rwkvas/random.hpp"
#include "rwkvas/tensor.hpp"

namespace rwkvas::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0, bool requires_grad = false) {
  Rng rng(seed);
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), normal_values(rng, n, stddev), requires_grad);
}

inline ModelConfig tiny_config(Variant v, int d = 8, int layers = 2, int vocab = 11, std::uint64_t seed = 3) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_dim = d;
  c.vocab_size = vocab;
  c.variant = v;
  c.seed = seed;
  c.context_len = 64;
  return c;
}

inline std::vector<int> random_tokens(std::size_t n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> dist(0, vocab - 1);
  std::vector<int> out(n);
  for (auto& t : out) t = dist(rng);
  return out;
}

inline std::string data_path(const std::string& name) { return std::string(RWKVAS_TEST_DATA_DIR) + "/" + name; }

}  // namespace rwkvas::testing
