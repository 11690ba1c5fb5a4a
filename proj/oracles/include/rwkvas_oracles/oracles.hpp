#pragma once

// Slow, direct reference computations used as ground truth by the tests. Everything here is
// written from the defining formulas on plain vectors and shares no arithmetic with the
// engine's kernels.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rwkvas/gradcheck.hpp"
#include "rwkvas/model.hpp"

namespace rwkvas::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major rows

Mat to_mat(const Tensor& t);
Vec to_vec(const Tensor& t);

Mat matmul(const Mat& a, const Mat& b);
Vec vec_mat(const Vec& x, const Mat& w);
double sigmoid(double x);
double softplus(double x);
Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta, double eps = 1e-5);

/// out[t][c] = Σ_{i≤t} exp(-(t-i)·w[c])·k[i][c]·v[i][c] / Σ_{i≤t} exp(-(t-i)·w[c]).
Mat wkv(const Mat& k, const Mat& v, const Vec& w);

/// Mean over rows of -log softmax(logits[t])[targets[t]], with log-sum-exp in long double.
double mean_nll(const Mat& logits, std::span<const int> targets);

Mat time_mix(const Mat& x, const TimeMixParams& p);
Mat channel_mix(const Mat& x, const ChannelMixParams& p);
/// Whole model logits, token by token, with the quadratic weighted sum and a direct shift loop.
Mat model_logits(const RwkvModel& model, std::span<const int> tokens);

/// Mean next-token loss of `tokens` with every intermediate held in long double. Central
/// differences of this loss are free of the ~1e-16 evaluation noise a float64 forward pass
/// carries, which otherwise dominates the difference quotient for gradients near 1e-8.
long double model_loss_extended(const RwkvModel& model, std::span<const int> tokens);

/// Compares the engine's reverse-mode gradient of model.loss(tokens) with central differences
/// of model_loss_extended over every parameter coordinate. Error per coordinate as in
/// finite_difference_check: |analytic - numeric| / (|analytic| + 1e-8).
GradCheckResult model_gradient_check(const RwkvModel& model, std::span<const int> tokens, double step = 1e-5);

/// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i.
Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5);

using Ngram = std::vector<int>;
/// Counts of every contiguous n-gram, by sliding a window.
std::map<Ngram, int> ngram_counts(std::span<const int> tokens, int n);

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Sentence BLEU with the same smoothing rule as the engine: zero matches at n >= 2 count as
/// 1/(c_n + 1); zero unigram matches give 0.
double bleu(std::span<const int> candidate, const std::vector<std::vector<int>>& references, int max_n = 4);
Scores rouge_n(std::span<const int> candidate, std::span<const int> reference, int n);
/// LCS by trying every subsequence of the shorter sequence (exponential; keep inputs short).
std::size_t lcs_exhaustive(std::span<const int> a, std::span<const int> b);
Scores rouge_l(std::span<const int> candidate, std::span<const int> reference);

struct GoldenPair {
  std::vector<int> candidate;
  std::vector<std::vector<int>> references;
};

/// Parses `cand:` / `ref:` blocks. Words are mapped to ids in order of first appearance
/// across the whole file, so equal words share an id between candidate and references.
std::vector<GoldenPair> load_golden_pairs(const std::string& path);

/// All-zero logits: every next-token distribution is uniform over `vocab` tokens.
class UniformModel final : public LanguageModel {
 public:
  explicit UniformModel(int vocab) : vocab_(vocab) {}
  int vocab_size() const override { return vocab_; }
  std::vector<double> score(std::span<const int> tokens) const override;
  std::unique_ptr<DecodeStream> open_stream() const override;

 private:
  int vocab_;
};

}  // namespace rwkvas::oracle
