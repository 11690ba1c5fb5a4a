#include "rwkvas/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rwkvas/checkpoint.hpp"
#include "rwkvas/metrics.hpp"
#include "rwkvas/ops.hpp"

namespace rwkvas {

void TrainConfig::validate(const ModelConfig& model) const {
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must be in [0, 1)");
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (grad_clip_norm <= 0.0) throw ConfigError("grad_clip_norm must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (context_len < 1) throw ConfigError("context_len must be >= 1");
  if (context_len > model.context_len) throw ConfigError("train context_len exceeds the model context_len");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

AdamW::AdamW(std::vector<NamedTensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    const bool decay = p.rank() == 2 && params_[i].name != "emb";
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_) + (decay ? weight_decay_ * w[j] : 0.0);
      w[j] -= lr_ * update;
    }
  }
}

double clip_grad_norm(std::span<const NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "step,train_loss,val_ppl\n";
  std::ostringstream row;
  for (const auto& r : records) {
    row.str("");
    row.precision(17);
    row << r.step << ',' << r.train_loss << ',';
    if (r.val_ppl) row << *r.val_ppl;
    out << row.str() << '\n';
  }
}

double mean_token_loss(const RwkvModel& model, std::span<const TokenSequence> sequences) {
  NoGradScope no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    const double l = model.loss(seq).item();
    total += l * static_cast<double>(seq.size() - 1);
    count += seq.size() - 1;
  }
  if (count == 0) throw std::invalid_argument("mean_token_loss: no sequence with two or more tokens");
  return total / static_cast<double>(count);
}

namespace {

std::string parameter_norms(const RwkvModel& model) {
  std::ostringstream os;
  for (const auto& p : model.parameters()) {
    double sq = 0.0;
    for (double v : p.tensor.data()) sq += v * v;
    os << "  " << p.name << " |w|=" << std::sqrt(sq) << '\n';
  }
  return os.str();
}

TokenSequence sample_window(const std::vector<TokenSequence>& train, std::size_t window, Rng& rng) {
  const auto& seq = train[static_cast<std::size_t>(rng() % train.size())];
  if (seq.size() <= window) return seq;
  const std::size_t start = static_cast<std::size_t>(rng() % (seq.size() - window + 1));
  return TokenSequence(seq.begin() + static_cast<std::ptrdiff_t>(start),
                       seq.begin() + static_cast<std::ptrdiff_t>(start + window));
}

}  // namespace

TrainLog train(RwkvModel& model, const DatasetSplit& data, const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate(model.config());
  std::vector<TokenSequence> usable;
  for (const auto& s : data.train)
    if (s.size() >= 2) usable.push_back(s);
  if (usable.empty()) throw std::invalid_argument("train: no training sequence with two or more tokens");

  const auto params = model.parameters();
  AdamW optimizer(params, config);
  Rng rng(derive_seed(config.seed, "batch"));
  const auto window = static_cast<std::size_t>(config.context_len) + 1;

  TrainLog log;
  log.initial_loss = mean_token_loss(model, usable);

  auto checkpoint = [&](const std::string& file) {
    if (!outputs.checkpoint_dir) return;
    std::ostringstream rng_state;
    rng_state << rng;
    OptimizerSnapshot snap{optimizer.steps_taken(), optimizer.first_moments(), optimizer.second_moments()};
    save_checkpoint(*outputs.checkpoint_dir / file, model, {outputs.vocab, std::move(snap), rng_state.str()});
  };

  for (int step = 1; step <= config.steps; ++step) {
    for (const auto& p : params) Tensor(p.tensor).zero_grad();
    double loss_value = 0.0;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor total;
      for (int b = 0; b < config.batch_size; ++b) {
        const TokenSequence w = sample_window(usable, window, rng);
        Tensor l = model.loss(w);
        total = b == 0 ? l : add(total, l);
      }
      Tensor loss = mul(total, 1.0 / static_cast<double>(config.batch_size));
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw TrainingDiverged("non-finite training loss at step " + std::to_string(step) + "\nparameter norms:\n" +
                               parameter_norms(model));
      }
      backward(loss);
    }
    clip_grad_norm(params, config.grad_clip_norm);
    optimizer.step();

    TrainRecord rec{step, loss_value, std::nullopt};
    if (step % config.eval_every == 0 || step == config.steps) {
      if (!data.validation.empty()) {
        const double ppl = perplexity(model, data.validation);
        rec.val_ppl = ppl;
        if (!log.best_val_ppl || ppl < *log.best_val_ppl) {
          log.best_val_ppl = ppl;
          log.best_step = step;
          checkpoint("best.ckpt");
        }
      }
    }
    log.records.push_back(rec);
  }

  log.final_loss = mean_token_loss(model, usable);
  checkpoint("final.ckpt");
  return log;
}

}  // namespace rwkvas
