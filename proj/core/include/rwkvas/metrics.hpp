#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rwkvas/data.hpp"
#include "rwkvas/generate.hpp"
#include "rwkvas/model.hpp"

namespace rwkvas {

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // input too short for the metric; all scores are zero
};

/// 2PR/(P+R), 0 when both are 0.
double harmonic_f1(double precision, double recall);

struct BleuScore {
  double score = 0.0;
  bool empty_candidate = false;
};

/// exp(total next-token NLL / total predicted tokens), pooled over every sequence.
/// Each sequence needs at least two tokens.
double perplexity(const LanguageModel& model, std::span<const TokenSequence> sequences);

/// Sentence BLEU: clipped n-gram precisions p_1..p_max_n, geometric mean, brevity penalty
/// min(1, e^{1-r/c}) with r the closest reference length (shorter wins ties). A zero match
/// count for n >= 2 is smoothed to 1/(c_n + 1).
BleuScore bleu(std::span<const int> candidate, std::span<const TokenSequence> references, int max_n = 4);

PrecisionRecall rouge_n(std::span<const int> candidate, std::span<const int> reference, int n);
PrecisionRecall rouge_l(std::span<const int> candidate, std::span<const int> reference);

std::size_t lcs_length(std::span<const int> a, std::span<const int> b);

struct MetricReport {
  double perplexity = 0.0;
  double bleu = 0.0;
  PrecisionRecall rouge1;
  PrecisionRecall rouge_l;
  std::size_t n_samples = 0;

  /// Flat JSON object; rouge1/rougeL hold F1, with _precision/_recall/_f1 companions.
  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row(std::string_view label) const;
};

struct EvalSample {
  TokenSequence prompt;
  TokenSequence reference;
  TokenSequence candidate;
};

/// Perplexity over the full test sequences; BLEU/ROUGE from continuing the first half of each
/// sequence for |second half| tokens and comparing against the second half. Per-sample scores
/// are averaged in test-set order (F1 is recomputed from the averaged precision and recall).
/// `workers` > 1 generates samples concurrently; results do not depend on it.
MetricReport evaluate_model(const LanguageModel& model, std::span<const TokenSequence> test_set,
                            const GenerationConfig& generation, std::vector<EvalSample>* samples = nullptr,
                            int workers = 1);

}  // namespace rwkvas
