#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "rwkvas/generate.hpp"

using namespace rwkvas;

namespace {

/// Logits depend only on the last token fed: a fixed table row per token.
class TableModel final : public LanguageModel {
 public:
  explicit TableModel(std::vector<std::vector<double>> table) : table_(std::move(table)) {}
  int vocab_size() const override { return static_cast<int>(table_.front().size()); }
  std::vector<double> score(std::span<const int> tokens) const override {
    std::vector<double> out;
    for (int t : tokens) out.insert(out.end(), table_[static_cast<std::size_t>(t)].begin(), table_[static_cast<std::size_t>(t)].end());
    return out;
  }
  std::unique_ptr<DecodeStream> open_stream() const override {
    struct Stream final : DecodeStream {
      const TableModel* m;
      explicit Stream(const TableModel* model) : m(model) {}
      std::vector<double> step(int token) override { return m->table_[static_cast<std::size_t>(token)]; }
    };
    return std::make_unique<Stream>(this);
  }

 private:
  std::vector<std::vector<double>> table_;
};

TableModel favor(int vocab, int preferred, double margin = 5.0) {
  std::vector<double> row(static_cast<std::size_t>(vocab), 0.0);
  row[static_cast<std::size_t>(preferred)] = margin;
  return TableModel(std::vector<std::vector<double>>(static_cast<std::size_t>(vocab), row));
}

}  // namespace

TEST(Strategy, Parse) {
  EXPECT_EQ(parse_strategy("greedy"), SamplingStrategy::greedy);
  EXPECT_EQ(parse_strategy("temperature"), SamplingStrategy::temperature);
  EXPECT_EQ(parse_strategy("top_k"), SamplingStrategy::top_k);
  EXPECT_EQ(parse_strategy("top-k"), SamplingStrategy::top_k);
  EXPECT_THROW(parse_strategy("nucleus"), ConfigError);
  EXPECT_EQ(strategy_name(SamplingStrategy::top_k), "top_k");
}

TEST(Sampling, ArgmaxTieBreaksLow) {
  const std::vector<double> logits{0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(argmax(logits), 1);
  EXPECT_THROW(argmax(std::vector<double>{}), std::invalid_argument);
}

TEST(Sampling, TinyTemperatureIsGreedy) {
  Rng rng(1);
  GenerationConfig cfg;
  cfg.strategy = SamplingStrategy::temperature;
  cfg.temperature = 1e-6;
  for (int i = 0; i < 50; ++i) {
    const auto logits = rwkvas::testing::random_tensor({9}, static_cast<std::uint64_t>(i)).to_vector();
    EXPECT_EQ(sample_token(logits, cfg, rng), argmax(logits));
  }
}

TEST(Sampling, TopOneIsGreedy) {
  Rng rng(2);
  GenerationConfig cfg;
  cfg.strategy = SamplingStrategy::top_k;
  cfg.top_k = 1;
  cfg.temperature = 5.0;
  for (int i = 0; i < 50; ++i) {
    const auto logits = rwkvas::testing::random_tensor({9}, static_cast<std::uint64_t>(100 + i)).to_vector();
    EXPECT_EQ(sample_token(logits, cfg, rng), argmax(logits));
  }
}

TEST(Sampling, TopKRestrictsSupport) {
  Rng rng(3);
  GenerationConfig cfg;
  cfg.strategy = SamplingStrategy::top_k;
  cfg.top_k = 2;
  const std::vector<double> logits{0.0, 3.0, 1.0, 2.9, -2.0};
  std::map<int, int> counts;
  for (int i = 0; i < 2000; ++i) ++counts[sample_token(logits, cfg, rng)];
  EXPECT_EQ(counts.size(), 2u);
  EXPECT_GT(counts[1], 0);
  EXPECT_GT(counts[3], 0);
}

TEST(Sampling, TemperatureFrequencies) {
  Rng rng(4);
  GenerationConfig cfg;
  cfg.strategy = SamplingStrategy::temperature;
  cfg.temperature = 1.0;
  const std::vector<double> logits{0.0, std::log(3.0)};
  int ones = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ones += sample_token(logits, cfg, rng);
  EXPECT_NEAR(ones / static_cast<double>(n), 0.75, 0.015);
}

TEST(Sampling, InvalidParameters) {
  Rng rng(5);
  GenerationConfig cfg;
  const std::vector<double> logits{1.0, 2.0};
  cfg.strategy = SamplingStrategy::temperature;
  cfg.temperature = 0.0;
  EXPECT_THROW(sample_token(logits, cfg, rng), ConfigError);
  cfg.strategy = SamplingStrategy::top_k;
  cfg.temperature = 1.0;
  cfg.top_k = 0;
  EXPECT_THROW(sample_token(logits, cfg, rng), ConfigError);
}

TEST(Generate, GreedyFollowsRiggedModel) {
  const TableModel model = favor(10, 7);
  const std::vector<int> prompt{1, 4};
  const auto r = generate(model, prompt, 6, GenerationConfig{});
  EXPECT_EQ(r.tokens, std::vector<int>(6, 7));
  EXPECT_FALSE(r.stopped_at_eos);
}

TEST(Generate, StopsAtEos) {
  const TableModel model = favor(10, kEosToken);
  const std::vector<int> prompt{1};
  const auto r = generate(model, prompt, 6, GenerationConfig{});
  EXPECT_EQ(r.tokens, std::vector<int>{kEosToken});
  EXPECT_TRUE(r.stopped_at_eos);
  GenerationConfig keep;
  keep.stop_at_eos = false;
  EXPECT_EQ(generate(model, prompt, 4, keep).tokens.size(), 4u);
}

TEST(Generate, RecordsLogitsAndIsSeeded) {
  const TableModel model(std::vector<std::vector<double>>(6, std::vector<double>{0.1, 0.2, 0.0, 0.4, 0.3, 0.0}));
  GenerationConfig cfg;
  cfg.strategy = SamplingStrategy::temperature;
  cfg.seed = 77;
  cfg.record_logits = true;
  cfg.stop_at_eos = false;
  const std::vector<int> prompt{1};
  const auto a = generate(model, prompt, 20, cfg);
  const auto b = generate(model, prompt, 20, cfg);
  EXPECT_EQ(a.tokens, b.tokens);
  ASSERT_EQ(a.logits.size(), 20u);
  EXPECT_EQ(a.logits[0].size(), 6u);
  cfg.seed = 78;
  EXPECT_NE(generate(model, prompt, 20, cfg).tokens, a.tokens);
}

TEST(Generate, RejectsBadArguments) {
  const TableModel model = favor(4, 3);
  EXPECT_THROW(generate(model, std::vector<int>{}, 3, GenerationConfig{}), std::invalid_argument);
  EXPECT_THROW(generate(model, std::vector<int>{1}, 0, GenerationConfig{}), std::invalid_argument);
}

TEST(Generate, RealModelGreedyMatchesArgmaxOfScore) {
  const RwkvModel model(rwkvas::testing::tiny_config(Variant::enhanced, 8, 2, 11, 5));
  const std::vector<int> prompt{1, 5, 6};
  GenerationConfig cfg;
  cfg.stop_at_eos = false;
  const auto r = generate(model, prompt, 5, cfg);
  std::vector<int> seq = prompt;
  for (int i = 0; i < 5; ++i) {
    const auto logits = model.score(seq);
    const int next = argmax(std::span<const double>(logits).subspan(logits.size() - 11));
    EXPECT_EQ(r.tokens[static_cast<std::size_t>(i)], next);
    seq.push_back(next);
  }
}
