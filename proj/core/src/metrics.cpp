#include "rwkvas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "rwkvas/random.hpp"

namespace rwkvas {

namespace {

using NgramCounts = std::map<std::vector<int>, std::size_t>;

NgramCounts count_ngrams(std::span<const int> seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                              seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

double sequence_nll(const LanguageModel& model, const TokenSequence& seq) {
  const auto V = static_cast<std::size_t>(model.vocab_size());
  const std::span<const int> inputs(seq.data(), seq.size() - 1);
  const auto logits = model.score(inputs);
  if (logits.size() != inputs.size() * V) throw std::logic_error("perplexity: model returned malformed logits");
  double total = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const double* row = logits.data() + t * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[static_cast<std::size_t>(seq[t + 1])];
  }
  return total;
}

}  // namespace

double harmonic_f1(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

double perplexity(const LanguageModel& model, std::span<const TokenSequence> sequences) {
  if (sequences.empty()) throw std::invalid_argument("perplexity: no sequences");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) throw std::invalid_argument("perplexity: every sequence needs at least two tokens");
    for (int t : seq) {
      if (t < 0 || t >= model.vocab_size()) throw IndexError("perplexity: token outside the model vocabulary");
    }
    nll += sequence_nll(model, seq);
    count += seq.size() - 1;
  }
  return std::exp(nll / static_cast<double>(count));
}

BleuScore bleu(std::span<const int> candidate, std::span<const TokenSequence> references, int max_n) {
  if (references.empty()) throw std::invalid_argument("bleu: at least one reference is required");
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  if (candidate.empty()) return {0.0, true};

  const std::size_t c = candidate.size();
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    const NgramCounts cand = count_ngrams(candidate, un);
    NgramCounts max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, cnt] : count_ngrams(ref, un)) max_ref[gram] = std::max(max_ref[gram], cnt);
    }
    std::size_t matched = 0;
    for (const auto& [gram, cnt] : cand) {
      const auto it = max_ref.find(gram);
      if (it != max_ref.end()) matched += std::min(cnt, it->second);
    }
    const std::size_t total = c >= un ? c - un + 1 : 0;
    double p;
    if (matched > 0) {
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else if (n == 1) {
      return {0.0, false};
    } else {
      p = 1.0 / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }

  std::size_t r = references.front().size();
  for (const auto& ref : references) {
    const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r)) r = ref.size();
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return {bp * std::exp(log_sum / static_cast<double>(max_n)), false};
}

PrecisionRecall rouge_n(std::span<const int> candidate, std::span<const int> reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto un = static_cast<std::size_t>(n);
  if (candidate.size() < un || reference.size() < un) return {0.0, 0.0, 0.0, true};
  const NgramCounts cand = count_ngrams(candidate, un);
  const NgramCounts ref = count_ngrams(reference, un);
  std::size_t overlap = 0;
  for (const auto& [gram, cnt] : cand) {
    const auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(cnt, it->second);
  }
  PrecisionRecall out;
  out.precision = static_cast<double>(overlap) / static_cast<double>(candidate.size() - un + 1);
  out.recall = static_cast<double>(overlap) / static_cast<double>(reference.size() - un + 1);
  out.f1 = harmonic_f1(out.precision, out.recall);
  return out;
}

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PrecisionRecall rouge_l(std::span<const int> candidate, std::span<const int> reference) {
  if (candidate.empty() || reference.empty()) return {0.0, 0.0, 0.0, true};
  const auto l = static_cast<double>(lcs_length(candidate, reference));
  PrecisionRecall out;
  out.precision = l / static_cast<double>(candidate.size());
  out.recall = l / static_cast<double>(reference.size());
  out.f1 = harmonic_f1(out.precision, out.recall);
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["perplexity"] = perplexity;
  j["bleu"] = bleu;
  j["rouge1"] = rouge1.f1;
  j["rougeL"] = rouge_l.f1;
  j["rouge1_precision"] = rouge1.precision;
  j["rouge1_recall"] = rouge1.recall;
  j["rouge1_f1"] = rouge1.f1;
  j["rougeL_precision"] = rouge_l.precision;
  j["rougeL_recall"] = rouge_l.recall;
  j["rougeL_f1"] = rouge_l.f1;
  j["n_samples"] = n_samples;
  return j.dump();
}

std::string MetricReport::csv_header() {
  return "label,perplexity,bleu,rouge1_precision,rouge1_recall,rouge1_f1,rougeL_precision,rougeL_recall,rougeL_f1,"
         "n_samples";
}

std::string MetricReport::csv_row(std::string_view label) const {
  std::ostringstream os;
  os.precision(17);
  os << label << ',' << perplexity << ',' << bleu << ',' << rouge1.precision << ',' << rouge1.recall << ','
     << rouge1.f1 << ',' << rouge_l.precision << ',' << rouge_l.recall << ',' << rouge_l.f1 << ',' << n_samples;
  return os.str();
}

MetricReport evaluate_model(const LanguageModel& model, std::span<const TokenSequence> test_set,
                            const GenerationConfig& generation, std::vector<EvalSample>* samples, int workers) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_model: empty test set");
  for (const auto& seq : test_set) {
    if (seq.size() < 2) throw std::invalid_argument("evaluate_model: test sequences need at least two tokens");
  }

  struct Scored {
    EvalSample sample;
    double bleu = 0.0;
    PrecisionRecall rouge1, rouge_l;
  };
  auto score_one = [&](std::size_t i) {
    const auto& seq = test_set[i];
    const std::size_t half = seq.size() / 2;
    Scored s;
    s.sample.prompt.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(half));
    s.sample.reference.assign(seq.begin() + static_cast<std::ptrdiff_t>(half), seq.end());
    GenerationConfig cfg = generation;
    cfg.stop_at_eos = false;
    cfg.record_logits = false;
    cfg.seed = derive_seed(generation.seed, "eval" + std::to_string(i));
    s.sample.candidate =
        generate(model, s.sample.prompt, static_cast<int>(s.sample.reference.size()), cfg).tokens;
    const std::vector<TokenSequence> refs{s.sample.reference};
    s.bleu = bleu(s.sample.candidate, refs).score;
    s.rouge1 = rouge_n(s.sample.candidate, s.sample.reference, 1);
    s.rouge_l = rouge_l(s.sample.candidate, s.sample.reference);
    return s;
  };

  std::vector<Scored> scored(test_set.size());
  const auto n_workers = static_cast<std::size_t>(std::max(1, workers));
  if (n_workers == 1) {
    for (std::size_t i = 0; i < test_set.size(); ++i) scored[i] = score_one(i);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < n_workers; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < test_set.size(); i += n_workers) scored[i] = score_one(i);
      }));
    }
    for (auto& j : jobs) j.get();
  }

  MetricReport report;
  report.n_samples = test_set.size();
  report.perplexity = perplexity(model, test_set);
  for (const auto& s : scored) {
    report.bleu += s.bleu;
    report.rouge1.precision += s.rouge1.precision;
    report.rouge1.recall += s.rouge1.recall;
    report.rouge_l.precision += s.rouge_l.precision;
    report.rouge_l.recall += s.rouge_l.recall;
  }
  const auto n = static_cast<double>(scored.size());
  report.bleu /= n;
  report.rouge1.precision /= n;
  report.rouge1.recall /= n;
  report.rouge1.f1 = harmonic_f1(report.rouge1.precision, report.rouge1.recall);
  report.rouge_l.precision /= n;
  report.rouge_l.recall /= n;
  report.rouge_l.f1 = harmonic_f1(report.rouge_l.precision, report.rouge_l.recall);

  if (samples) {
    samples->clear();
    for (auto& s : scored) samples->push_back(std::move(s.sample));
  }
  return report;
}

}  // namespace rwkvas
