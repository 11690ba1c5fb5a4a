#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rwkvas/bench.hpp"
#include "rwkvas/config.hpp"
#include "rwkvas/data.hpp"
#include "rwkvas/generate.hpp"
#include "rwkvas/metrics.hpp"
#include "rwkvas/train.hpp"

namespace rwkvas {

struct ExperimentConfig {
  std::filesystem::path corpus = "data/corpus.txt";
  std::filesystem::path out_dir;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::uint64_t seed = 7;
  int replicates = 1;

  int num_layers = 2;
  int hidden_dim = 32;
  int context_len = 128;
  TrainConfig train;

  GenerationConfig generation;
  int sample_tokens = 50;
  std::vector<std::string> prompts{"Once upon a time, in a distant land...",
                                   "In the realm of artificial intelligence..."};
  int eval_workers = 2;

  bool run_bench = true;
  BenchConfig bench;

  /// Checkpoints are read from `<load_dir>/<variant>-seed<s>/final.ckpt` instead of training.
  std::optional<std::filesystem::path> load_dir;
  bool save_checkpoints = false;

  /// Seed of replicate r (0-based): seed + r.
  std::uint64_t replicate_seed(int r) const { return seed + static_cast<std::uint64_t>(r); }
  void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown or repeated keys and malformed
/// values throw ConfigError.
ExperimentConfig parse_experiment_config(std::string_view text);
/// Like parse_experiment_config; relative `corpus` and `load_dir` are resolved against the
/// directory holding the file.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Every key with its resolved value, in a form parse_experiment_config accepts.
std::string to_lock_text(const ExperimentConfig& config);

struct PreparedData {
  std::vector<std::string> texts;
  Vocabulary vocab;
  DatasetSplit split;
};

/// Loads the corpus, builds the vocabulary over corpus and prompts, and splits with the
/// config seed's "split" stream (shared by every variant and replicate).
PreparedData prepare_data(const ExperimentConfig& config);
ModelConfig model_config(const ExperimentConfig& config, Variant variant, int vocab_size, std::uint64_t seed);
TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed);
GenerationConfig generation_config(const ExperimentConfig& config, std::uint64_t seed);

/// BOS + tokens of `prompt` with a trailing run of '.' and whitespace removed. A prompt ending
/// in "..." asks for a continuation, while a trained model reads a final '.' as end of sample.
std::vector<int> encode_prompt(std::string_view prompt, const Vocabulary& vocab);

struct VariantRun {
  Variant variant = Variant::baseline;
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  TrainLog log;
  double val_perplexity = 0.0;
  MetricReport test;
  std::vector<EvalSample> samples;
  std::vector<std::string> continuations;  // one per configured prompt
};

struct VariantSummary {
  Variant variant = Variant::baseline;
  int runs_ok = 0;
  int runs_failed = 0;
  double mean_val_perplexity = 0.0;
  double std_val_perplexity = 0.0;
  double mean_perplexity = 0.0;
  double mean_bleu = 0.0;
  double mean_rouge1 = 0.0;
  double mean_rouge_l = 0.0;
  double std_rouge_l = 0.0;
  /// 1 = best. Variants without a successful run share the last rank.
  int rank_val_perplexity = 0;
  int rank_rouge_l = 0;
};

std::vector<VariantSummary> summarize(const std::vector<VariantRun>& runs, const std::vector<Variant>& order);

struct ExperimentResult {
  std::vector<VariantRun> runs;
  std::vector<VariantSummary> summary;
  std::optional<TimingStats> timing;
  std::string metrics_json;
};

/// Trains (or loads) each variant for each replicate, evaluates on the shared test split,
/// optionally times forward passes, and writes metrics.json, timing.csv, plotdata.csv,
/// samples.txt and config.lock to out_dir. A diverging variant is recorded as failed and the
/// run continues. metrics.json holds no timings and is identical across runs with one config.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Deterministic JSON report of the runs and their summary.
std::string metrics_json(const std::vector<VariantRun>& runs, const std::vector<VariantSummary>& summary,
                         const ExperimentConfig& config);

}  // namespace rwkvas
