#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "json.hpp"
#include "rwkvas/experiment.hpp"

using namespace rwkvas;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Small config over the shipped corpus, writing into a fresh temporary directory.
ExperimentConfig small_config(const std::string& name) {
  ExperimentConfig c;
  c.corpus = rwkvas::testing::data_path("corpus.txt");
  c.out_dir = fs::temp_directory_path() / ("rwkvas_test_" + name);
  fs::remove_all(c.out_dir);
  c.variants = {Variant::baseline, Variant::enhanced};
  c.num_layers = 1;
  c.hidden_dim = 8;
  c.context_len = 32;
  c.train.steps = 4;
  c.train.batch_size = 2;
  c.train.context_len = 16;
  c.train.eval_every = 2;
  c.sample_tokens = 5;
  c.eval_workers = 1;
  c.run_bench = false;
  return c;
}

}  // namespace

TEST(ExperimentConfig, ParseKeys) {
  const auto c = parse_experiment_config(
      "# comment\n"
      "corpus = some/corpus.txt\n"
      "variants = baseline, no-layernorm\n"
      "seed = 11   # trailing comment\n"
      "replicates = 3\n"
      "layers = 4\n"
      "learning_rate = 0.01\n"
      "strategy = top_k\n"
      "top_k = 5\n"
      "prompts = alpha | beta gamma\n"
      "bench = false\n"
      "bench_iters = 7\n");
  EXPECT_EQ(c.corpus, fs::path("some/corpus.txt"));
  EXPECT_EQ(c.variants, (std::vector<Variant>{Variant::baseline, Variant::no_layernorm}));
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.replicates, 3);
  EXPECT_EQ(c.replicate_seed(2), 13u);
  EXPECT_EQ(c.num_layers, 4);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.generation.strategy, SamplingStrategy::top_k);
  EXPECT_EQ(c.generation.top_k, 5);
  EXPECT_EQ(c.prompts, (std::vector<std::string>{"alpha", "beta gamma"}));
  EXPECT_FALSE(c.run_bench);
  EXPECT_EQ(c.bench.timed_iters, 7);
  EXPECT_EQ(c.bench.variants, c.variants);
  EXPECT_EQ(c.bench.seed, 11u);
}

TEST(ExperimentConfig, RejectsBadInput) {
  EXPECT_THROW(parse_experiment_config("colour = red\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("seed = abc\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("steps 10\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("variants = baseline, gated\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("bench = maybe\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("strategy = beam\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("replicates = 0\n").validate(), ConfigError);
}

TEST(ExperimentConfig, LockRoundTrip) {
  ExperimentConfig c = parse_experiment_config("seed = 5\nreplicates = 2\nvariants = fixed-gate\nlearning_rate = 0.0031\n");
  const std::string lock = to_lock_text(c);
  EXPECT_NE(lock.find("# replicate seeds: 5 6"), std::string::npos);
  const ExperimentConfig back = parse_experiment_config(lock);
  EXPECT_EQ(to_lock_text(back), lock);
  EXPECT_EQ(back.train.learning_rate, 0.0031);
}

TEST(ExperimentConfig, ShippedConfigsLoad) {
  for (const char* name : {"default.cfg", "ablation.cfg"}) {
    const auto path = fs::path(RWKVAS_TEST_DATA_DIR).parent_path() / "configs" / name;
    const ExperimentConfig c = load_experiment_config(path);
    EXPECT_TRUE(fs::exists(c.corpus)) << name;
    EXPECT_EQ(c.variants.size(), 4u);
  }
}

TEST(ExperimentConfig, RelativePathsFollowConfigFile) {
  const auto dir = fs::temp_directory_path() / "rwkvas_test_cfgdir";
  fs::create_directories(dir);
  std::ofstream(dir / "x.cfg") << "corpus = corpus.txt\nload_dir = ckpts\n";
  const auto c = load_experiment_config(dir / "x.cfg");
  EXPECT_EQ(c.corpus, dir / "corpus.txt");
  EXPECT_EQ(*c.load_dir, dir / "ckpts");
  fs::remove_all(dir);
}

TEST(Experiment, EncodePromptStripsEllipsis) {
  const Vocabulary v = Vocabulary::from_bytes({'a', 'b', '.'});
  EXPECT_EQ(encode_prompt("ab...", v), (std::vector<int>{kBosToken, v.id('a'), v.id('b')}));
  EXPECT_EQ(encode_prompt("a.b", v), (std::vector<int>{kBosToken, v.id('a'), v.id('.'), v.id('b')}));
  EXPECT_EQ(encode_prompt("...", v), std::vector<int>{kBosToken});
}

TEST(Experiment, PrepareDataSharedAcrossVariants) {
  ExperimentConfig c = small_config("prep");
  const PreparedData a = prepare_data(c);
  c.variants = {Variant::fixed_gate};
  const PreparedData b = prepare_data(c);
  EXPECT_EQ(a.split.test, b.split.test);
  EXPECT_EQ(a.split.train.size() + a.split.validation.size() + a.split.test.size(), a.texts.size());
  for (const auto& p : c.prompts)
    for (unsigned char ch : p) EXPECT_TRUE(a.vocab.contains(ch));
  c.corpus = "/nonexistent/corpus.txt";
  EXPECT_THROW(prepare_data(c), std::runtime_error);
}

TEST(Experiment, UntrainedModelsScoreNearZeroBleu) {
  ExperimentConfig c = small_config("untrained");
  c.train.steps = 0;
  const auto result = run_experiment(c);
  ASSERT_EQ(result.runs.size(), 2u);
  for (const auto& r : result.runs) {
    ASSERT_TRUE(r.ok);
    EXPECT_LT(r.test.bleu, 0.05) << variant_name(r.variant);
    EXPECT_EQ(r.log.initial_loss, r.log.final_loss);
  }
  fs::remove_all(c.out_dir);
}

TEST(Experiment, WritesArtifactsDeterministically) {
  ExperimentConfig c = small_config("artifacts");
  const auto first = run_experiment(c);
  const std::string json1 = read_file(c.out_dir / "metrics.json");
  for (const char* f : {"metrics.json", "plotdata.csv", "samples.txt", "config.lock"})
    EXPECT_TRUE(fs::exists(c.out_dir / f)) << f;
  EXPECT_FALSE(fs::exists(c.out_dir / "timing.csv"));
  const auto second = run_experiment(c);
  EXPECT_EQ(read_file(c.out_dir / "metrics.json"), json1);
  EXPECT_EQ(first.metrics_json, json1);

  const auto j = nlohmann::json::parse(json1);
  ASSERT_EQ(j["runs"].size(), 2u);
  EXPECT_EQ(j["runs"][0]["variant"], "baseline");
  EXPECT_EQ(j["runs"][1]["variant"], "enhanced");
  EXPECT_EQ(j["summary"].size(), 2u);
  EXPECT_EQ(j["ranking"]["by_rougeL"].size(), 2u);

  // Two variants, four metric rows each.
  const std::string plot = read_file(c.out_dir / "plotdata.csv");
  EXPECT_EQ(std::count(plot.begin(), plot.end(), '\n'), 1 + 2 * 4);
  EXPECT_EQ(plot.substr(0, 21), "variant,metric,value\n");
  fs::remove_all(c.out_dir);
}

TEST(Experiment, SaveAndReloadCheckpoints) {
  ExperimentConfig c = small_config("ckpt");
  c.variants = {Variant::no_layernorm};
  c.save_checkpoints = true;
  const auto trained = run_experiment(c);
  ExperimentConfig reload = c;
  reload.save_checkpoints = false;
  reload.load_dir = c.out_dir / "checkpoints";
  reload.out_dir = c.out_dir / "reloaded";
  const auto loaded = run_experiment(reload);
  EXPECT_EQ(loaded.runs[0].test.to_json(), trained.runs[0].test.to_json());
  EXPECT_EQ(loaded.runs[0].continuations, trained.runs[0].continuations);
  fs::remove_all(c.out_dir);
}

TEST(Experiment, DivergenceIsRecordedAndRunContinues) {
  ExperimentConfig c = small_config("diverge");
  c.train.learning_rate = 1e300;
  c.train.weight_decay = 0.0;
  const auto result = run_experiment(c);
  ASSERT_EQ(result.runs.size(), 2u);
  for (const auto& r : result.runs) {
    EXPECT_FALSE(r.ok);
    EXPECT_NE(r.failure.find("non-finite"), std::string::npos);
  }
  const auto j = nlohmann::json::parse(read_file(c.out_dir / "metrics.json"));
  EXPECT_EQ(j["runs"][1]["status"], "failed");
  EXPECT_NE(read_file(c.out_dir / "samples.txt").find("FAILED"), std::string::npos);
  fs::remove_all(c.out_dir);
}

TEST(Experiment, SummaryRanksAndFailedVariants) {
  auto run = [](Variant v, bool ok, double val, double rl) {
    VariantRun r;
    r.variant = v;
    r.ok = ok;
    r.val_perplexity = val;
    r.test.rouge_l.f1 = rl;
    return r;
  };
  const std::vector<VariantRun> runs{run(Variant::baseline, true, 5.0, 0.3), run(Variant::enhanced, true, 4.0, 0.1),
                                     run(Variant::enhanced, true, 6.0, 0.3), run(Variant::fixed_gate, false, 0, 0),
                                     run(Variant::no_layernorm, true, 3.0, 0.1)};
  const auto s = summarize(runs, {kAllVariants.begin(), kAllVariants.end()});
  ASSERT_EQ(s.size(), 4u);
  EXPECT_DOUBLE_EQ(s[1].mean_val_perplexity, 5.0);
  EXPECT_DOUBLE_EQ(s[1].mean_rouge_l, 0.2);
  EXPECT_EQ(s[2].rank_val_perplexity, 1);  // no_layernorm
  EXPECT_EQ(s[0].rank_val_perplexity, 2);  // baseline ties enhanced at 5.0 and comes first
  EXPECT_EQ(s[1].rank_val_perplexity, 3);
  EXPECT_EQ(s[3].rank_val_perplexity, 4);
  EXPECT_EQ(s[3].runs_failed, 1);
  EXPECT_EQ(s[3].rank_rouge_l, 4);
  EXPECT_EQ(s[0].rank_rouge_l, 1);
}
