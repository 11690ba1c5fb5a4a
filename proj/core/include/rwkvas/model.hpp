#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rwkvas/config.hpp"
#include "rwkvas/rwkv.hpp"
#include "rwkvas/tensor.hpp"

namespace rwkvas {

/// Incremental decoder: feed one token, get next-token logits.
class DecodeStream {
 public:
  virtual ~DecodeStream() = default;
  virtual std::vector<double> step(int token) = 0;
};

/// Anything that can score a sequence in one pass and decode it step by step.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual int vocab_size() const = 0;
  /// Row-major [T x V] next-token logits for every prefix of `tokens`.
  virtual std::vector<double> score(std::span<const int> tokens) const = 0;
  virtual std::unique_ptr<DecodeStream> open_stream() const = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Embedding → stacked blocks → LayerNorm → linear head.
class RwkvModel final : public LanguageModel {
 public:
  explicit RwkvModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Logits [T x V] via the parallel form; records on the active tape, if any.
  Tensor forward(std::span<const int> tokens) const;
  /// Mean next-token cross-entropy of a sequence (needs at least two tokens).
  Tensor loss(std::span<const int> tokens) const;

  /// Handles to every trainable tensor in a fixed order. Names are stable checkpoint keys.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

  std::vector<LayerParams>& layers() { return layers_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  Tensor& embedding() { return embedding_; }
  const Tensor& embedding() const { return embedding_; }
  Tensor& head() { return head_; }
  const Tensor& head() const { return head_; }
  Tensor& head_bias() { return head_bias_; }
  const Tensor& head_bias() const { return head_bias_; }
  LayerNormParams& ln_out() { return ln_out_; }
  const LayerNormParams& ln_out() const { return ln_out_; }

  /// Deep copy with independent parameter storage.
  RwkvModel clone() const;

  int vocab_size() const override { return config_.vocab_size; }
  std::vector<double> score(std::span<const int> tokens) const override;
  std::unique_ptr<DecodeStream> open_stream() const override;

 private:
  ModelConfig config_;
  Tensor embedding_;  // [V x d]
  std::vector<LayerParams> layers_;
  LayerNormParams ln_out_;
  Tensor head_;       // [d x V]
  Tensor head_bias_;  // [V]
};

}  // namespace rwkvas
