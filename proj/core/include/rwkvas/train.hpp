#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwkvas/data.hpp"
#include "rwkvas/model.hpp"
#include "rwkvas/random.hpp"

namespace rwkvas {

struct TrainConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  int batch_size = 8;
  int steps = 300;
  int context_len = 64;
  int eval_every = 50;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& model) const;
};

/// Adam with decoupled weight decay on matrix-shaped parameters.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, const TrainConfig& config);

  /// Applies one update from the gradients currently held by the parameters.
  void step();
  long long steps_taken() const { return t_; }

  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(long long t) { t_ = t; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long long t_ = 0;
};

/// L2 norm over all parameter gradients; scales them down to max_norm when it is exceeded.
double clip_grad_norm(std::span<const NamedTensor> params, double max_norm);

struct TrainRecord {
  int step = 0;
  double train_loss = 0.0;
  std::optional<double> val_ppl;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  double initial_loss = 0.0;  // mean per-token loss over the whole train split before step 1
  double final_loss = 0.0;    // same measure after the last step
  std::optional<double> best_val_ppl;
  int best_step = 0;

  void write_csv(std::ostream& out) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOutputs {
  /// When set, `final.ckpt` and `best.ckpt` are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<Vocabulary> vocab;
};

/// Mean per-token next-token loss over the sequences (no gradient tracking).
double mean_token_loss(const RwkvModel& model, std::span<const TokenSequence> sequences);

/// Trains in place on random windows of the train split. Deterministic for fixed seeds.
/// Throws TrainingDiverged on a non-finite loss.
TrainLog train(RwkvModel& model, const DatasetSplit& data, const TrainConfig& config,
               const TrainOutputs& outputs = {});

}  // namespace rwkvas
