#include "rwkvas/model.hpp"

#include "rwkvas/ops.hpp"
#include "rwkvas/random.hpp"

namespace rwkvas {

namespace {

class RwkvStream final : public DecodeStream {
 public:
  explicit RwkvStream(const RwkvModel& model) : model_(model) {
    const auto d = static_cast<std::size_t>(model.config().hidden_dim);
    for (int l = 0; l < model.config().num_layers; ++l) states_.push_back(LayerState::initial(d, l));
  }

  std::vector<double> step(int token) override {
    NoGradScope no_grad;
    const RwkvModel& m = model_;
    const int ids[1] = {token};
    Tensor x = embedding(m.embedding(), ids).reshape({static_cast<std::size_t>(model_.config().hidden_dim)});
    for (std::size_t l = 0; l < states_.size(); ++l) x = block_step(x, model_.layers()[l], states_[l]);
    const Tensor logits = add(linear(layer_norm(x, m.ln_out().gamma, m.ln_out().beta), m.head()), m.head_bias());
    return logits.to_vector();
  }

 private:
  const RwkvModel& model_;
  std::vector<LayerState> states_;
};

}  // namespace

RwkvModel::RwkvModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.hidden_dim);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  Rng rng(derive_seed(config_.seed, "init"));
  embedding_ = Tensor::from({V, d}, normal_values(rng, V * d, 1.0), true);
  for (int l = 0; l < config_.num_layers; ++l) {
    layers_.push_back(LayerParams::init(config_, l, derive_seed(config_.seed, "layer" + std::to_string(l))));
  }
  ln_out_ = LayerNormParams::identity(d);
  head_ = Tensor::from({d, V}, normal_values(rng, d * V, 0.02), true);
  head_bias_ = Tensor::zeros({V}, true);
}

Tensor RwkvModel::forward(std::span<const int> tokens) const {
  if (tokens.empty()) throw DimensionError("forward: empty token sequence");
  Tensor x = rwkvas::embedding(embedding_, tokens);
  for (const auto& layer : layers_) x = block_forward(x, layer);
  return add_bias(linear(layer_norm(x, ln_out_.gamma, ln_out_.beta), head_), head_bias_);
}

Tensor RwkvModel::loss(std::span<const int> tokens) const {
  if (tokens.size() < 2) throw DimensionError("loss: sequence needs at least two tokens");
  const Tensor logits = forward(tokens.first(tokens.size() - 1));
  return softmax_cross_entropy(logits, tokens.subspan(1));
}

std::vector<NamedTensor> RwkvModel::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"emb", embedding_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& p = layers_[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.push_back({pre + "ln_time.gamma", p.ln_time.gamma});
    out.push_back({pre + "ln_time.beta", p.ln_time.beta});
    out.push_back({pre + "time.w_r", p.time.w_r});
    out.push_back({pre + "time.w_k", p.time.w_k});
    out.push_back({pre + "time.w_v", p.time.w_v});
    out.push_back({pre + "time.decay_raw", p.time.decay_raw});
    out.push_back({pre + "time.w_kv", p.time.w_kv});
    if (p.enhancement) {
      const auto& g = p.enhancement->gate;
      out.push_back({pre + "gate.w_g", g.w_g});
      out.push_back({pre + "gate.b_g", g.b_g});
      out.push_back({pre + "gate.ln_gamma", g.ln_gamma});
      out.push_back({pre + "gate.ln_beta", g.ln_beta});
    }
    out.push_back({pre + "ln_channel.gamma", p.ln_channel.gamma});
    out.push_back({pre + "ln_channel.beta", p.ln_channel.beta});
    out.push_back({pre + "channel.w_k", p.channel.w_k});
    out.push_back({pre + "channel.w_v", p.channel.w_v});
    out.push_back({pre + "channel.w_r", p.channel.w_r});
  }
  out.push_back({"ln_out.gamma", ln_out_.gamma});
  out.push_back({"ln_out.beta", ln_out_.beta});
  out.push_back({"head", head_});
  out.push_back({"head_bias", head_bias_});
  return out;
}

std::size_t RwkvModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

RwkvModel RwkvModel::clone() const {
  RwkvModel copy(config_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!layers_[l].enhancement) copy.layers_[l].enhancement.reset();
  }
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto values = src[i].tensor.data();
    std::copy(values.begin(), values.end(), dst[i].tensor.mutable_data().begin());
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].enhancement) {
      copy.layers_[l].enhancement->gate.mode = layers_[l].enhancement->gate.mode;
      copy.layers_[l].enhancement->use_layernorm = layers_[l].enhancement->use_layernorm;
      copy.layers_[l].enhancement->carry = layers_[l].enhancement->carry;
    }
  }
  return copy;
}

std::vector<double> RwkvModel::score(std::span<const int> tokens) const {
  NoGradScope no_grad;
  return forward(tokens).to_vector();
}

std::unique_ptr<DecodeStream> RwkvModel::open_stream() const { return std::make_unique<RwkvStream>(*this); }

}  // namespace rwkvas
