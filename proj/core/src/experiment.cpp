#include "rwkvas/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "rwkvas/checkpoint.hpp"
#include "rwkvas/random.hpp"

namespace rwkvas {

namespace {

using json = nlohmann::ordered_json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    std::string item = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config: invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: invalid boolean '" + value + "' for " + key);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto i32 = [](int ExperimentConfig::*m) {
      return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<int>(k, v); };
    };
    t["corpus"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.corpus = v; };
    t["out"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; };
    t["variants"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.variants.clear();
      for (const auto& name : split_list(v, ',')) c.variants.push_back(parse_variant(name));
    };
    t["seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    };
    t["replicates"] = i32(&ExperimentConfig::replicates);
    t["layers"] = i32(&ExperimentConfig::num_layers);
    t["hidden_dim"] = i32(&ExperimentConfig::hidden_dim);
    t["context_len"] = i32(&ExperimentConfig::context_len);
    t["steps"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.steps = parse_number<int>(k, v);
    };
    t["batch_size"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.batch_size = parse_number<int>(k, v);
    };
    t["train_context"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.context_len = parse_number<int>(k, v);
    };
    t["eval_every"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.eval_every = parse_number<int>(k, v);
    };
    t["learning_rate"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.learning_rate = parse_number<double>(k, v);
    };
    t["beta1"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.beta1 = parse_number<double>(k, v);
    };
    t["beta2"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.beta2 = parse_number<double>(k, v);
    };
    t["adam_eps"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.adam_eps = parse_number<double>(k, v);
    };
    t["weight_decay"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.weight_decay = parse_number<double>(k, v);
    };
    t["grad_clip"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train.grad_clip_norm = parse_number<double>(k, v);
    };
    t["strategy"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.generation.strategy = parse_strategy(v);
    };
    t["temperature"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.generation.temperature = parse_number<double>(k, v);
    };
    t["top_k"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.generation.top_k = parse_number<int>(k, v);
    };
    t["sample_tokens"] = i32(&ExperimentConfig::sample_tokens);
    t["prompts"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.prompts = split_list(v, '|'); };
    t["eval_workers"] = i32(&ExperimentConfig::eval_workers);
    t["bench"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.run_bench = parse_bool(k, v); };
    t["bench_batch"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bench.batch_size = parse_number<int>(k, v);
    };
    t["bench_seq_len"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bench.seq_len = parse_number<int>(k, v);
    };
    t["bench_hidden_dim"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bench.hidden_dim = parse_number<int>(k, v);
    };
    t["bench_layers"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bench.num_layers = parse_number<int>(k, v);
    };
    t["bench_warmup"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bench.warmup_iters = parse_number<int>(k, v);
    };
    t["bench_iters"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bench.timed_iters = parse_number<int>(k, v);
    };
    t["load_dir"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      if (v.empty()) {
        c.load_dir.reset();
      } else {
        c.load_dir = v;
      }
    };
    t["save_checkpoints"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.save_checkpoints = parse_bool(k, v);
    };
    return t;
  }();
  return table;
}

std::string run_dir_name(Variant v, std::uint64_t seed) {
  return std::string(variant_name(v)) + "-seed" + std::to_string(seed);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

json report_json(const MetricReport& r) { return json::parse(r.to_json()); }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("config: variants must not be empty");
  if (replicates < 1) throw ConfigError("config: replicates must be >= 1");
  if (sample_tokens < 0) throw ConfigError("config: sample_tokens must be >= 0");
  if (eval_workers < 1) throw ConfigError("config: eval_workers must be >= 1");
  ModelConfig mc;
  mc.num_layers = num_layers;
  mc.hidden_dim = hidden_dim;
  mc.context_len = context_len;
  mc.vocab_size = kReservedTokens + 1;
  mc.validate();
  train.validate(mc);
  if (generation.temperature <= 0.0) throw ConfigError("config: temperature must be > 0");
  if (generation.top_k < 1) throw ConfigError("config: top_k must be >= 1");
  if (run_bench) {
    BenchConfig b = bench;
    b.variants = variants;
    b.validate();
  }
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string value = trim(std::string_view(stripped).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    it->second(config, key, value);
  }
  config.bench.variants = config.variants;
  config.bench.seed = config.seed;
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  ExperimentConfig config = parse_experiment_config(buf.str());
  const auto base = path.parent_path();
  if (config.corpus.is_relative()) config.corpus = base / config.corpus;
  if (config.load_dir && config.load_dir->is_relative()) config.load_dir = base / *config.load_dir;
  return config;
}

std::string to_lock_text(const ExperimentConfig& c) {
  std::ostringstream os;
  auto kv = [&](std::string_view k, const std::string& v) { os << k << " = " << v << '\n'; };
  std::string variants;
  for (std::size_t i = 0; i < c.variants.size(); ++i) {
    if (i) variants += ", ";
    variants += variant_name(c.variants[i]);
  }
  std::string prompts;
  for (std::size_t i = 0; i < c.prompts.size(); ++i) {
    if (i) prompts += " | ";
    prompts += c.prompts[i];
  }
  kv("corpus", c.corpus.generic_string());
  kv("out", c.out_dir.generic_string());
  kv("variants", variants);
  kv("seed", std::to_string(c.seed));
  kv("replicates", std::to_string(c.replicates));
  kv("layers", std::to_string(c.num_layers));
  kv("hidden_dim", std::to_string(c.hidden_dim));
  kv("context_len", std::to_string(c.context_len));
  kv("steps", std::to_string(c.train.steps));
  kv("batch_size", std::to_string(c.train.batch_size));
  kv("train_context", std::to_string(c.train.context_len));
  kv("eval_every", std::to_string(c.train.eval_every));
  kv("learning_rate", fmt_double(c.train.learning_rate));
  kv("beta1", fmt_double(c.train.beta1));
  kv("beta2", fmt_double(c.train.beta2));
  kv("adam_eps", fmt_double(c.train.adam_eps));
  kv("weight_decay", fmt_double(c.train.weight_decay));
  kv("grad_clip", fmt_double(c.train.grad_clip_norm));
  kv("strategy", std::string(strategy_name(c.generation.strategy)));
  kv("temperature", fmt_double(c.generation.temperature));
  kv("top_k", std::to_string(c.generation.top_k));
  kv("sample_tokens", std::to_string(c.sample_tokens));
  kv("prompts", prompts);
  kv("eval_workers", std::to_string(c.eval_workers));
  kv("bench", c.run_bench ? "true" : "false");
  kv("bench_batch", std::to_string(c.bench.batch_size));
  kv("bench_seq_len", std::to_string(c.bench.seq_len));
  kv("bench_hidden_dim", std::to_string(c.bench.hidden_dim));
  kv("bench_layers", std::to_string(c.bench.num_layers));
  kv("bench_warmup", std::to_string(c.bench.warmup_iters));
  kv("bench_iters", std::to_string(c.bench.timed_iters));
  kv("load_dir", c.load_dir ? c.load_dir->generic_string() : std::string{});
  kv("save_checkpoints", c.save_checkpoints ? "true" : "false");
  os << "# replicate seeds:";
  for (int r = 0; r < c.replicates; ++r) os << ' ' << c.replicate_seed(r);
  os << '\n';
  return os.str();
}

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData out;
  out.texts = load_corpus(config.corpus);
  std::vector<std::string> all = out.texts;
  all.insert(all.end(), config.prompts.begin(), config.prompts.end());
  out.vocab = Vocabulary::from_corpus(all);
  std::vector<TokenSequence> seqs;
  seqs.reserve(out.texts.size());
  for (const auto& t : out.texts) seqs.push_back(encode_sample(t, out.vocab));
  out.split = split_dataset(std::move(seqs), derive_seed(config.seed, "split"));
  return out;
}

ModelConfig model_config(const ExperimentConfig& config, Variant variant, int vocab_size, std::uint64_t seed) {
  ModelConfig mc;
  mc.num_layers = config.num_layers;
  mc.hidden_dim = config.hidden_dim;
  mc.context_len = config.context_len;
  mc.vocab_size = vocab_size;
  mc.variant = variant;
  mc.seed = seed;
  return mc;
}

TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig tc = config.train;
  tc.seed = derive_seed(seed, "train");
  return tc;
}

GenerationConfig generation_config(const ExperimentConfig& config, std::uint64_t seed) {
  GenerationConfig g = config.generation;
  g.seed = derive_seed(seed, "generate");
  return g;
}

std::vector<int> encode_prompt(std::string_view prompt, const Vocabulary& vocab) {
  const auto end = prompt.find_last_not_of(". \t\r\n");
  prompt = end == std::string_view::npos ? std::string_view{} : prompt.substr(0, end + 1);
  std::vector<int> out{kBosToken};
  const auto body = tokenize(prompt, vocab);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::vector<VariantSummary> summarize(const std::vector<VariantRun>& runs, const std::vector<Variant>& order) {
  std::vector<VariantSummary> out;
  for (Variant v : order) {
    VariantSummary s;
    s.variant = v;
    std::vector<double> val, ppl, bl, r1, rl;
    for (const auto& r : runs) {
      if (r.variant != v) continue;
      if (!r.ok) {
        ++s.runs_failed;
        continue;
      }
      ++s.runs_ok;
      val.push_back(r.val_perplexity);
      ppl.push_back(r.test.perplexity);
      bl.push_back(r.test.bleu);
      r1.push_back(r.test.rouge1.f1);
      rl.push_back(r.test.rouge_l.f1);
    }
    s.mean_val_perplexity = mean_of(val);
    s.std_val_perplexity = std_of(val);
    s.mean_perplexity = mean_of(ppl);
    s.mean_bleu = mean_of(bl);
    s.mean_rouge1 = mean_of(r1);
    s.mean_rouge_l = mean_of(rl);
    s.std_rouge_l = std_of(rl);
    out.push_back(s);
  }

  auto assign_ranks = [&](auto better, int VariantSummary::*rank) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i].runs_ok > 0) idx.push_back(i);
    // Stable sort keeps the configured variant order for ties.
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return better(out[a], out[b]); });
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]].*rank = static_cast<int>(i) + 1;
    for (auto& s : out)
      if (s.runs_ok == 0) s.*rank = static_cast<int>(idx.size()) + 1;
  };
  assign_ranks([](const VariantSummary& a, const VariantSummary& b) { return a.mean_val_perplexity < b.mean_val_perplexity; },
               &VariantSummary::rank_val_perplexity);
  assign_ranks([](const VariantSummary& a, const VariantSummary& b) { return a.mean_rouge_l > b.mean_rouge_l; },
               &VariantSummary::rank_rouge_l);
  return out;
}

std::string metrics_json(const std::vector<VariantRun>& runs, const std::vector<VariantSummary>& summary,
                         const ExperimentConfig& config) {
  json root;
  root["seed"] = config.seed;
  root["replicates"] = config.replicates;
  root["steps"] = config.train.steps;
  json jr = json::array();
  for (const auto& r : runs) {
    json e;
    e["variant"] = std::string(variant_name(r.variant));
    e["replicate"] = r.replicate;
    e["seed"] = r.seed;
    e["status"] = r.ok ? "ok" : "failed";
    if (!r.ok) {
      e["failure"] = r.failure;
    } else {
      e["perplexity"] = r.test.perplexity;
      e["bleu"] = r.test.bleu;
      e["rouge1"] = r.test.rouge1.f1;
      e["rougeL"] = r.test.rouge_l.f1;
      e["val_perplexity"] = r.val_perplexity;
      e["initial_train_loss"] = r.log.initial_loss;
      e["final_train_loss"] = r.log.final_loss;
      e["best_val_perplexity"] = r.log.best_val_ppl ? json(*r.log.best_val_ppl) : json(nullptr);
      e["best_step"] = r.log.best_step;
      e["test"] = report_json(r.test);
    }
    jr.push_back(std::move(e));
  }
  root["runs"] = std::move(jr);

  json js = json::array();
  for (const auto& s : summary) {
    js.push_back({{"variant", std::string(variant_name(s.variant))},
                  {"runs_ok", s.runs_ok},
                  {"runs_failed", s.runs_failed},
                  {"mean_val_perplexity", s.mean_val_perplexity},
                  {"std_val_perplexity", s.std_val_perplexity},
                  {"perplexity", s.mean_perplexity},
                  {"bleu", s.mean_bleu},
                  {"rouge1", s.mean_rouge1},
                  {"rougeL", s.mean_rouge_l},
                  {"std_rougeL", s.std_rouge_l},
                  {"rank_val_perplexity", s.rank_val_perplexity},
                  {"rank_rougeL", s.rank_rouge_l}});
  }
  root["summary"] = std::move(js);

  auto ranking = [&](int VariantSummary::*rank) {
    std::vector<const VariantSummary*> ptrs;
    for (const auto& s : summary) ptrs.push_back(&s);
    std::stable_sort(ptrs.begin(), ptrs.end(), [&](auto* a, auto* b) { return a->*rank < b->*rank; });
    json arr = json::array();
    for (auto* p : ptrs) arr.push_back(std::string(variant_name(p->variant)));
    return arr;
  };
  root["ranking"] = {{"by_val_perplexity", ranking(&VariantSummary::rank_val_perplexity)},
                     {"by_rougeL", ranking(&VariantSummary::rank_rouge_l)}};
  return root.dump(2) + "\n";
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.out_dir.empty()) throw ConfigError("run_experiment: an output directory is required");
  const PreparedData data = prepare_data(config);
  if (data.split.validation.empty() || data.split.test.empty()) throw std::runtime_error("corpus too small to split");
  std::filesystem::create_directories(config.out_dir);

  ExperimentResult result;
  std::ostringstream samples_txt;
  for (int rep = 0; rep < config.replicates; ++rep) {
    const std::uint64_t rs = config.replicate_seed(rep);
    for (Variant v : config.variants) {
      VariantRun run;
      run.variant = v;
      run.replicate = rep;
      run.seed = rs;
      const std::string dir_name = run_dir_name(v, rs);
      try {
        std::optional<RwkvModel> model;
        if (config.load_dir) {
          auto loaded = load_checkpoint(*config.load_dir / dir_name / "final.ckpt");
          if (loaded.model.config().variant != v) throw CheckpointError("checkpoint variant mismatch in " + dir_name);
          model.emplace(std::move(loaded.model));
          run.log.initial_loss = run.log.final_loss = mean_token_loss(*model, data.split.train);
        } else {
          model.emplace(model_config(config, v, data.vocab.size(), rs));
          TrainOutputs outputs;
          if (config.save_checkpoints) {
            outputs.checkpoint_dir = config.out_dir / "checkpoints" / dir_name;
            std::filesystem::create_directories(*outputs.checkpoint_dir);
            outputs.vocab = data.vocab;
          }
          run.log = train(*model, data.split, train_config(config, rs), outputs);
        }
        run.val_perplexity = perplexity(*model, data.split.validation);
        const GenerationConfig gen = generation_config(config, rs);
        GenerationConfig eval_gen = gen;
        eval_gen.stop_at_eos = false;
        run.test = evaluate_model(*model, data.split.test, eval_gen, &run.samples, config.eval_workers);
        for (const auto& p : config.prompts) {
          const auto out = generate(*model, encode_prompt(p, data.vocab), config.sample_tokens, gen);
          run.continuations.push_back(detokenize(out.tokens, data.vocab));
        }
        run.ok = true;
      } catch (const TrainingDiverged& e) {
        run.ok = false;
        run.failure = e.what();
      }

      samples_txt << "== " << variant_name(v) << " seed " << rs << " ==\n";
      if (!run.ok) {
        samples_txt << "FAILED: " << run.failure << "\n\n";
      } else {
        for (std::size_t i = 0; i < config.prompts.size(); ++i) {
          samples_txt << "prompt: " << config.prompts[i] << "\n";
          samples_txt << "output: " << run.continuations[i] << "\n";
        }
        const std::size_t shown = std::min<std::size_t>(run.samples.size(), 3);
        for (std::size_t i = 0; i < shown; ++i) {
          const auto& s = run.samples[i];
          samples_txt << "[test " << i << "] prompt:    " << detokenize(s.prompt, data.vocab) << "\n";
          samples_txt << "[test " << i << "] reference: " << detokenize(s.reference, data.vocab) << "\n";
          samples_txt << "[test " << i << "] candidate: " << detokenize(s.candidate, data.vocab) << "\n";
        }
        samples_txt << "\n";
      }
      result.runs.push_back(std::move(run));
    }
  }

  result.summary = summarize(result.runs, config.variants);
  result.metrics_json = metrics_json(result.runs, result.summary, config);

  std::vector<PlotRow> plot;
  for (const auto& s : result.summary) {
    if (s.runs_ok == 0) continue;
    const std::string name(variant_name(s.variant));
    plot.push_back({name, "perplexity", s.mean_perplexity});
    plot.push_back({name, "bleu", s.mean_bleu});
    plot.push_back({name, "rouge1", s.mean_rouge1});
    plot.push_back({name, "rougeL", s.mean_rouge_l});
  }

  if (config.run_bench) {
    BenchConfig bench = config.bench;
    bench.variants = config.variants;
    result.timing = run_timing(bench);
    write_file(config.out_dir / "timing.csv", result.timing->to_csv());
    const auto timing_rows = plot_rows(*result.timing);
    plot.insert(plot.end(), timing_rows.begin(), timing_rows.end());
  }

  write_file(config.out_dir / "metrics.json", result.metrics_json);
  write_file(config.out_dir / "plotdata.csv", emit_plot_data(plot));
  write_file(config.out_dir / "samples.txt", samples_txt.str());
  write_file(config.out_dir / "config.lock", to_lock_text(config));
  return result;
}

}  // namespace rwkvas
