#include "rwkvas/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rwkvas/random.hpp"
#include "rwkvas/tensor.hpp"

namespace rwkvas {

void BenchConfig::validate() const {
  if (variants.empty()) throw ConfigError("bench: at least one variant is required");
  if (batch_size < 1) throw ConfigError("bench: batch_size must be >= 1");
  if (seq_len < 1) throw ConfigError("bench: seq_len must be >= 1");
  if (warmup_iters < 1) throw ConfigError("bench: warmup_iters must be >= 1");
  if (timed_iters < 3) throw ConfigError("bench: timed_iters must be >= 3");
  if (hidden_dim < 2 || num_layers < 1 || vocab_size < 2) throw ConfigError("bench: invalid model dimensions");
}

void TimingStats::compute_overheads() {
  const auto base = std::find_if(entries.begin(), entries.end(),
                                 [](const TimingEntry& e) { return e.variant == Variant::baseline; });
  for (auto& e : entries) {
    if (base == entries.end()) {
      e.overhead_vs_baseline.reset();
    } else {
      e.overhead_vs_baseline = relative_overhead(e.mean_s, base->mean_s);
    }
  }
}

std::string TimingStats::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "variant,mean_s,std_s,min_s,iters,overhead_vs_baseline,reference_s,reference_overhead\n";
  for (const auto& e : entries) {
    os << e.label << ',' << e.mean_s << ',' << e.std_s << ',' << e.min_s << ',' << e.iters << ',';
    if (e.overhead_vs_baseline) os << *e.overhead_vs_baseline;
    os << ',' << reference_seconds(e.variant) << ',' << reference_overhead(e.variant) << '\n';
  }
  return os.str();
}

double reference_seconds(Variant v) {
  for (const auto& r : kReferenceForwardTimes)
    if (r.variant == v) return r.seconds;
  throw ConfigError("no reference timing for variant");
}

double reference_overhead(Variant v) { return relative_overhead(reference_seconds(v), reference_seconds(Variant::baseline)); }

double relative_overhead(double variant_mean, double baseline_mean) { return variant_mean / baseline_mean - 1.0; }

std::vector<TokenSequence> make_bench_input(const BenchConfig& config) {
  Rng rng(derive_seed(config.seed, "bench-input"));
  std::uniform_int_distribution<int> dist(kReservedTokens, config.vocab_size - 1);
  std::vector<TokenSequence> batch(static_cast<std::size_t>(config.batch_size));
  for (auto& seq : batch) {
    seq.resize(static_cast<std::size_t>(config.seq_len));
    for (auto& t : seq) t = dist(rng);
  }
  return batch;
}

TimingEntry time_forward(const RwkvModel& model, std::span<const TokenSequence> input, const BenchConfig& config) {
  config.validate();
  using clock = std::chrono::steady_clock;
  NoGradScope no_grad;
  volatile double sink = 0.0;
  auto run_once = [&] {
    for (const auto& seq : input) sink = sink + model.forward(seq)[0];
  };
  for (int i = 0; i < config.warmup_iters; ++i) run_once();

  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(config.timed_iters));
  for (int i = 0; i < config.timed_iters; ++i) {
    const auto t0 = clock::now();
    run_once();
    const auto t1 = clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }

  TimingEntry e;
  e.variant = model.config().variant;
  e.label = std::string(variant_name(e.variant));
  e.iters = config.timed_iters;
  e.mean_s = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  double var = 0.0;
  for (double t : times) var += (t - e.mean_s) * (t - e.mean_s);
  e.std_s = std::sqrt(var / static_cast<double>(times.size() - 1));
  e.min_s = *std::min_element(times.begin(), times.end());
  return e;
}

TimingStats run_timing(const BenchConfig& config) {
  config.validate();
  const auto input = make_bench_input(config);
  TimingStats stats;
  for (Variant v : config.variants) {
    ModelConfig mc;
    mc.num_layers = config.num_layers;
    mc.hidden_dim = config.hidden_dim;
    mc.vocab_size = config.vocab_size;
    mc.context_len = config.seq_len;
    mc.variant = v;
    mc.seed = derive_seed(config.seed, "bench-model");
    const RwkvModel model(mc);
    stats.entries.push_back(time_forward(model, input, config));
  }
  stats.compute_overheads();
  return stats;
}

std::string emit_plot_data(std::span<const PlotRow> rows) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,metric,value\n";
  for (const auto& r : rows) os << r.variant << ',' << r.metric << ',' << r.value << '\n';
  return os.str();
}

std::vector<PlotRow> plot_rows(std::string_view variant, const MetricReport& report) {
  const std::string v(variant);
  return {{v, "perplexity", report.perplexity},
          {v, "bleu", report.bleu},
          {v, "rouge1", report.rouge1.f1},
          {v, "rougeL", report.rouge_l.f1}};
}

std::vector<PlotRow> plot_rows(const TimingStats& timing) {
  std::vector<PlotRow> rows;
  for (const auto& e : timing.entries) rows.push_back({e.label, "forward_time_s", e.mean_s});
  return rows;
}

}  // namespace rwkvas
