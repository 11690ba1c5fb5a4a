#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "helpers.hpp"
#include "rwkvas/checkpoint.hpp"
#include "rwkvas/train.hpp"

using namespace rwkvas;
using rwkvas::testing::random_tokens;
using rwkvas::testing::tiny_config;

namespace {

DatasetSplit tiny_split(int vocab, std::uint64_t seed) {
  std::vector<TokenSequence> seqs;
  for (std::uint64_t i = 0; i < 12; ++i) seqs.push_back(random_tokens(20, vocab, seed + i));
  return split_dataset(std::move(seqs), seed);
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.context_len = 16;
  c.eval_every = 5;
  c.seed = 1;
  return c;
}

}  // namespace

TEST(AdamW, SingleStepMatchesHandComputation) {
  Tensor w = Tensor::from({1, 2}, {1.0, -2.0}, true);
  Tensor b = Tensor::vector({0.5}, true);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt({{"w", w}, {"b", b}}, cfg);
  w.mutable_grad()[0] = 0.3;
  w.mutable_grad()[1] = -0.4;
  b.mutable_grad()[0] = 2.0;
  opt.step();
  // After one step the bias-corrected moments are g and g², so the Adam term is g/(|g| + eps).
  const auto adam = [&](double g) { return g / (std::abs(g) + cfg.adam_eps); };
  EXPECT_NEAR(w[0], 1.0 - 0.1 * (adam(0.3) + 0.01 * 1.0), 1e-15);
  EXPECT_NEAR(w[1], -2.0 - 0.1 * (adam(-0.4) + 0.01 * -2.0), 1e-15);
  EXPECT_NEAR(b[0], 0.5 - 0.1 * adam(2.0), 1e-15);  // vectors are not decayed
  EXPECT_EQ(opt.steps_taken(), 1);

  opt.step();  // same gradient again: moments stay at g, g²
  EXPECT_NEAR(b[0], 0.5 - 0.2 * adam(2.0), 1e-14);
}

TEST(AdamW, EmbeddingIsNotDecayed) {
  Tensor emb = Tensor::from({2, 2}, {1.0, 1.0, 1.0, 1.0}, true);
  Tensor mat = Tensor::from({2, 2}, {1.0, 1.0, 1.0, 1.0}, true);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.weight_decay = 0.1;
  AdamW opt({{"emb", emb}, {"layers.0.time.w_r", mat}}, cfg);
  emb.zero_grad();
  mat.zero_grad();
  opt.step();
  EXPECT_EQ(emb[0], 1.0);
  EXPECT_NEAR(mat[0], 1.0 - 0.5 * 0.1, 1e-15);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
  Tensor a = Tensor::vector({0.0, 0.0}, true), b = Tensor::vector({0.0}, true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 0.0;
  b.mutable_grad()[0] = 4.0;
  const std::vector<NamedTensor> params{{"a", a}, {"b", b}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-12);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  RwkvModel model(tiny_config(Variant::enhanced, 8, 1, 9));
  const auto before = model.clone();
  TrainConfig cfg = quick(3);
  cfg.learning_rate = 0.0;
  const TrainLog log = train(model, tiny_split(9, 2), cfg);
  const auto p = model.parameters(), q = before.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i].tensor.to_vector(), q[i].tensor.to_vector()) << p[i].name;
  EXPECT_EQ(log.initial_loss, log.final_loss);
  EXPECT_EQ(log.records.size(), 3u);
}

TEST(Train, ReducesLossAndIsDeterministic) {
  const DatasetSplit data = tiny_split(9, 3);
  RwkvModel a(tiny_config(Variant::enhanced, 8, 1, 9, 4)), b(tiny_config(Variant::enhanced, 8, 1, 9, 4));
  const TrainConfig cfg = quick(30);
  const TrainLog la = train(a, data, cfg), lb = train(b, data, cfg);
  EXPECT_LT(la.final_loss, la.initial_loss);
  ASSERT_EQ(la.records.size(), lb.records.size());
  for (std::size_t i = 0; i < la.records.size(); ++i) EXPECT_EQ(la.records[i].train_loss, lb.records[i].train_loss);
  EXPECT_EQ(a.head().to_vector(), b.head().to_vector());
  // val_ppl lands on every eval_every-th step and on the last one.
  EXPECT_TRUE(la.records[4].val_ppl.has_value());
  EXPECT_FALSE(la.records[5].val_ppl.has_value());
  EXPECT_TRUE(la.best_val_ppl.has_value());
}

TEST(Train, DivergenceIsReported) {
  RwkvModel model(tiny_config(Variant::enhanced, 8, 1, 9));
  TrainConfig cfg = quick(20);
  cfg.learning_rate = 1e300;
  cfg.weight_decay = 0.0;
  try {
    train(model, tiny_split(9, 5), cfg);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("parameter norms"), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  RwkvModel model(tiny_config(Variant::baseline, 4, 1, 9));
  const DatasetSplit data = tiny_split(9, 6);
  TrainConfig cfg = quick(1);
  cfg.context_len = 1000;
  EXPECT_THROW(train(model, data, cfg), ConfigError);
  cfg = quick(1);
  cfg.grad_clip_norm = 0.0;
  EXPECT_THROW(train(model, data, cfg), ConfigError);
  cfg = quick(1);
  cfg.beta2 = 1.0;
  EXPECT_THROW(train(model, data, cfg), ConfigError);
}

TEST(Train, WritesCheckpointsAndCsv) {
  const auto dir = std::filesystem::temp_directory_path() / "rwkvas_test_train";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  RwkvModel model(tiny_config(Variant::fixed_gate, 8, 1, 9));
  TrainOutputs outputs;
  outputs.checkpoint_dir = dir;
  outputs.vocab = Vocabulary::from_bytes({'a', 'b', 'c', 'd', 'e', 'f'});
  const TrainLog log = train(model, tiny_split(9, 7), quick(10), outputs);
  ASSERT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
  ASSERT_TRUE(std::filesystem::exists(dir / "final.ckpt"));
  const auto final_ckpt = load_checkpoint(dir / "final.ckpt");
  EXPECT_EQ(final_ckpt.model.head().to_vector(), model.head().to_vector());
  ASSERT_TRUE(final_ckpt.extras.optimizer.has_value());
  EXPECT_EQ(final_ckpt.extras.optimizer->step, 10);
  EXPECT_FALSE(final_ckpt.extras.rng_state.empty());
  EXPECT_TRUE(final_ckpt.extras.vocab.has_value());

  std::ostringstream csv;
  log.write_csv(csv);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "step,train_loss,val_ppl");
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2);
  }
  EXPECT_EQ(rows, 10);
  std::filesystem::remove_all(dir);
}

TEST(Train, MeanTokenLossWeightsByLength) {
  const RwkvModel model(tiny_config(Variant::baseline, 4, 1, 9));
  const TokenSequence a = random_tokens(3, 9, 1), b = random_tokens(9, 9, 2);
  const double la = model.loss(a).item(), lb = model.loss(b).item();
  const std::vector<TokenSequence> both{a, b};
  EXPECT_NEAR(mean_token_loss(model, both), (2 * la + 8 * lb) / 10.0, 1e-14);
}
