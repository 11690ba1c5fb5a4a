#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rwkvas/config.hpp"
#include "rwkvas/data.hpp"
#include "rwkvas/metrics.hpp"
#include "rwkvas/model.hpp"

namespace rwkvas {

struct BenchConfig {
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  int batch_size = 1;
  int seq_len = 512;
  int warmup_iters = 2;
  int timed_iters = 5;
  std::uint64_t seed = 0;
  int hidden_dim = 256;
  int num_layers = 4;
  int vocab_size = 256 + kReservedTokens;

  void validate() const;
};

struct TimingEntry {
  std::string label;
  Variant variant = Variant::baseline;
  double mean_s = 0.0;
  double std_s = 0.0;
  double min_s = 0.0;
  int iters = 0;
  std::optional<double> overhead_vs_baseline;
};

struct TimingStats {
  std::vector<TimingEntry> entries;

  /// Fills overhead_vs_baseline = mean/baseline_mean - 1 using the first baseline entry.
  void compute_overheads();
  /// Columns: variant, mean_s, std_s, min_s, iters, overhead_vs_baseline, reference_s,
  /// reference_overhead. The reference columns carry the published forward-pass timings.
  std::string to_csv() const;
};

struct ReferenceTiming {
  Variant variant;
  double seconds;
};

/// Reference average forward-pass seconds per variant (1.6B-parameter model on a T4 GPU).
/// Written next to local timings for comparison only.
inline constexpr std::array<ReferenceTiming, 4> kReferenceForwardTimes = {{
    {Variant::baseline, 0.472585},
    {Variant::enhanced, 0.486664},
    {Variant::no_layernorm, 0.481514},
    {Variant::fixed_gate, 0.481347},
}};

double reference_seconds(Variant v);
/// reference_seconds(v) / reference_seconds(baseline) - 1.
double reference_overhead(Variant v);

double relative_overhead(double variant_mean, double baseline_mean);

/// B random token sequences of length T drawn from the seed's "bench-input" stream.
std::vector<TokenSequence> make_bench_input(const BenchConfig& config);

/// Runs warmup_iters untimed then timed_iters timed full-sequence forward passes over every
/// sequence of `input`, on the calling thread, with a monotonic clock.
TimingEntry time_forward(const RwkvModel& model, std::span<const TokenSequence> input, const BenchConfig& config);

/// Builds one model per requested variant (shared seed) and times them one after another.
TimingStats run_timing(const BenchConfig& config);

struct PlotRow {
  std::string variant;
  std::string metric;
  double value = 0.0;
};

/// Tidy CSV: header `variant,metric,value`, then one row per input row.
std::string emit_plot_data(std::span<const PlotRow> rows);
std::vector<PlotRow> plot_rows(std::string_view variant, const MetricReport& report);
std::vector<PlotRow> plot_rows(const TimingStats& timing);

}  // namespace rwkvas
