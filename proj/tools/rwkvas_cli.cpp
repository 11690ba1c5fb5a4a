#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rwkvas/bench.hpp"
#include "rwkvas/checkpoint.hpp"
#include "rwkvas/experiment.hpp"
#include "rwkvas/generate.hpp"
#include "rwkvas/metrics.hpp"
#include "rwkvas/random.hpp"
#include "rwkvas/rwkv.hpp"
#include "rwkvas/train.hpp"
#include "rwkvas_oracles/oracles.hpp"

namespace fs = std::filesystem;
using namespace rwkvas;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> corpus;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  int tokens = 50;
  std::string prompt = "Once upon a time, in a distant land...";
};

ExperimentConfig resolve(const Options& opt) {
  ExperimentConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = load_experiment_config(opt.config_path);
  } else {
    cfg.corpus = RWKVAS_DEFAULT_CORPUS;
  }
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.bench.seed = *opt.seed;
  }
  if (opt.corpus) cfg.corpus = *opt.corpus;
  if (opt.out) cfg.out_dir = *opt.out;
  if (opt.variant) cfg.variants = {parse_variant(*opt.variant)};
  cfg.bench.variants = cfg.variants;
  return cfg;
}

Variant single_variant(const Options& opt) { return opt.variant ? parse_variant(*opt.variant) : Variant::enhanced; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

LoadedCheckpoint require_checkpoint(const Options& opt) {
  if (!opt.checkpoint) throw ConfigError("--checkpoint is required (produce one with `rwkvas train`)");
  return load_checkpoint(*opt.checkpoint);
}

int cmd_train(const Options& opt) {
  ExperimentConfig cfg = resolve(opt);
  const Variant v = single_variant(opt);
  const PreparedData data = prepare_data(cfg);
  RwkvModel model(model_config(cfg, v, data.vocab.size(), cfg.seed));
  TrainOutputs outputs;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    outputs.checkpoint_dir = cfg.out_dir;
    outputs.vocab = data.vocab;
  }
  std::cout << "variant " << variant_name(v) << ", " << model.parameter_count() << " parameters, "
            << data.split.train.size() << " train / " << data.split.validation.size() << " val / "
            << data.split.test.size() << " test sequences\n";
  const TrainLog log = train(model, data.split, train_config(cfg, cfg.seed), outputs);
  for (const auto& r : log.records) {
    if (r.val_ppl) std::cout << "step " << r.step << "  loss " << r.train_loss << "  val_ppl " << *r.val_ppl << '\n';
  }
  std::cout << "train loss " << log.initial_loss << " -> " << log.final_loss << '\n';
  if (!cfg.out_dir.empty()) {
    std::ofstream csv(cfg.out_dir / "train_log.csv");
    log.write_csv(csv);
    write_text(cfg.out_dir / "config.lock", to_lock_text(cfg));
    std::cout << "checkpoints written to " << cfg.out_dir.string() << '\n';
  }
  return 0;
}

int cmd_generate(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  auto loaded = require_checkpoint(opt);
  const Vocabulary vocab = loaded.extras.vocab ? *loaded.extras.vocab : Vocabulary::full_bytes();
  const auto prompt = encode_prompt(opt.prompt, vocab);
  const auto result = generate(loaded.model, prompt, opt.tokens, generation_config(cfg, cfg.seed));
  std::cout << detokenize(prompt, vocab) << detokenize(result.tokens, vocab) << '\n';
  return 0;
}

int cmd_eval(const Options& opt) {
  const ExperimentConfig cfg = resolve(opt);
  auto loaded = require_checkpoint(opt);
  const PreparedData data = prepare_data(cfg);
  if (loaded.extras.vocab && !(*loaded.extras.vocab == data.vocab)) {
    throw ConfigError("checkpoint vocabulary does not match the corpus vocabulary");
  }
  GenerationConfig gen = generation_config(cfg, cfg.seed);
  gen.stop_at_eos = false;
  const MetricReport report = evaluate_model(loaded.model, data.split.test, gen, nullptr, cfg.eval_workers);
  std::cout << report.to_json() << '\n';
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "metrics.json", report.to_json() + "\n");
  }
  return 0;
}

int cmd_bench(const Options& opt) {
  ExperimentConfig cfg = resolve(opt);
  if (!opt.variant) cfg.bench.variants.assign(kAllVariants.begin(), kAllVariants.end());
  const TimingStats stats = run_timing(cfg.bench);
  const std::string csv = stats.to_csv();
  std::cout << csv;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "timing.csv", csv);
    const auto rows = plot_rows(stats);
    write_text(cfg.out_dir / "plotdata.csv", emit_plot_data(rows));
  }
  return 0;
}

int cmd_ablate(const Options& opt) {
  ExperimentConfig cfg = resolve(opt);
  cfg.variants.assign(kAllVariants.begin(), kAllVariants.end());
  cfg.bench.variants = cfg.variants;
  if (cfg.out_dir.empty()) cfg.out_dir = "results";
  const ExperimentResult result = run_experiment(cfg);
  std::cout << "variant         ok  val_ppl     ppl         bleu      rouge1    rougeL    rank(ppl) rank(rougeL)\n";
  for (const auto& s : result.summary) {
    std::printf("%-15s %d/%d %-11.5g %-11.5g %-9.4f %-9.4f %-9.4f %-9d %d\n", std::string(variant_name(s.variant)).c_str(),
                s.runs_ok, s.runs_ok + s.runs_failed, s.mean_val_perplexity, s.mean_perplexity, s.mean_bleu,
                s.mean_rouge1, s.mean_rouge_l, s.rank_val_perplexity, s.rank_rouge_l);
  }
  if (result.timing) std::cout << '\n' << result.timing->to_csv();
  std::cout << "reports written to " << cfg.out_dir.string() << '\n';
  return 0;
}

int cmd_oracle(const Options& opt) {
  std::cout.precision(17);
  const std::uint64_t seed = opt.seed.value_or(0);
  Rng rng(derive_seed(seed, "oracle"));
  std::normal_distribution<double> normal;
  const std::size_t T = 6, d = 3;
  oracle::Mat k(T, oracle::Vec(d)), v(T, oracle::Vec(d));
  for (auto* m : {&k, &v})
    for (auto& row : *m)
      for (double& x : row) x = normal(rng);
  const oracle::Vec w{0.1, 0.7, 2.0};
  std::cout << "# weighted key-value average, T=6, d=3, w = (0.1, 0.7, 2.0)\n";
  const auto out = oracle::wkv(k, v, w);
  for (std::size_t t = 0; t < T; ++t) {
    std::cout << "t=" << t;
    for (double x : out[t]) std::cout << ' ' << x;
    std::cout << '\n';
  }

  std::cout << "# uniform-model perplexity (equals V)\n";
  for (int vocab : {2, 17, 259}) {
    const oracle::UniformModel model(vocab);
    const std::vector<TokenSequence> seqs{{1, 0, 1, 1}, {0, 1}};
    std::cout << "V=" << vocab << " ppl=" << perplexity(model, seqs) << '\n';
  }

  const std::string golden = opt.corpus ? std::string(fs::path(*opt.corpus).parent_path() / "golden_pairs.txt")
                                        : std::string(RWKVAS_GOLDEN_PAIRS);
  std::cout << "# golden pairs: bleu rouge1_p rouge1_r rouge1_f rougeL_p rougeL_r rougeL_f\n";
  int i = 0;
  for (const auto& pair : oracle::load_golden_pairs(golden)) {
    const auto r1 = oracle::rouge_n(pair.candidate, pair.references.front(), 1);
    const auto rl = oracle::rouge_l(pair.candidate, pair.references.front());
    std::cout << "pair " << i++ << ' ' << oracle::bleu(pair.candidate, pair.references) << ' ' << r1.precision << ' '
              << r1.recall << ' ' << r1.f1 << ' ' << rl.precision << ' ' << rl.recall << ' ' << rl.f1 << '\n';
  }

  std::cout << "# reference forward-time overheads\n";
  for (Variant variant : kAllVariants) {
    std::cout << variant_name(variant) << ' ' << reference_seconds(variant) << " s, overhead "
              << reference_overhead(variant) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RWKV language models with an adaptive gated token shift"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  app.add_option("--config", opt.config_path, "Experiment config file (flat key = value)")->check(CLI::ExistingFile);
  app.add_option("--variant", opt.variant, "baseline | enhanced | no-layernorm | fixed-gate");
  app.add_option("--seed", opt.seed, "Base seed");
  app.add_option("--corpus", opt.corpus, "Corpus text file");
  app.add_option("--out", opt.out, "Output directory");
  app.add_option("--tokens", opt.tokens, "Number of tokens to generate")->check(CLI::NonNegativeNumber);
  app.add_option("--prompt", opt.prompt, "Generation prompt");
  app.add_option("--checkpoint", opt.checkpoint, "Checkpoint file for generate / eval")->check(CLI::ExistingFile);

  int status = 0;
  auto* train_cmd = app.add_subcommand("train", "Train one variant and write checkpoints");
  auto* gen_cmd = app.add_subcommand("generate", "Continue a prompt from a checkpoint");
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the test split");
  auto* bench_cmd = app.add_subcommand("bench", "Time forward passes per variant");
  auto* ablate_cmd = app.add_subcommand("ablate", "Train, evaluate and time all four variants");
  auto* oracle_cmd = app.add_subcommand("oracle", "Print reference values from the slow oracles");
  train_cmd->callback([&] { status = cmd_train(opt); });
  gen_cmd->callback([&] { status = cmd_generate(opt); });
  eval_cmd->callback([&] { status = cmd_eval(opt); });
  bench_cmd->callback([&] { status = cmd_bench(opt); });
  ablate_cmd->callback([&] { status = cmd_ablate(opt); });
  oracle_cmd->callback([&] { status = cmd_oracle(opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return status;
}
