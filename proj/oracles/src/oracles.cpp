#include "rwkvas_oracles/oracles.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <stdexcept>

namespace rwkvas::oracle {

namespace {
constexpr double kLayerNormEpsOracle = 1e-5;
}  // namespace

Mat to_mat(const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("to_mat: rank-2 tensor expected");
  Mat m(t.dim(0), Vec(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  return m;
}

Vec to_vec(const Tensor& t) { return t.to_vector(); }

Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Mat out(n, Vec(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() != k) throw std::invalid_argument("matmul: inner dimensions differ");
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0.0L;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i][p]) * b[p][j];
      out[i][j] = static_cast<double>(s);
    }
  }
  return out;
}

Vec vec_mat(const Vec& x, const Mat& w) { return matmul(Mat{x}, w)[0]; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta, double eps) {
  const auto n = static_cast<long double>(x.size());
  long double mean = 0.0L;
  for (double v : x) mean += v;
  mean /= n;
  long double var = 0.0L;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const long double denom = std::sqrt(var + eps);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>((x[i] - mean) / denom * gamma[i] + beta[i]);
  return out;
}

Mat wkv(const Mat& k, const Mat& v, const Vec& w) {
  const std::size_t T = k.size();
  Mat out(T, Vec(w.size()));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < w.size(); ++c) {
      long double num = 0.0L, den = 0.0L;
      for (std::size_t i = 0; i <= t; ++i) {
        const long double weight = std::exp(-static_cast<long double>(t - i) * w[c]);
        num += weight * k[i][c] * v[i][c];
        den += weight;
      }
      out[t][c] = static_cast<double>(num / den);
    }
  }
  return out;
}

double mean_nll(const Mat& logits, std::span<const int> targets) {
  if (logits.size() != targets.size()) throw std::invalid_argument("mean_nll: row/target count mismatch");
  long double total = 0.0L;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    long double z = 0.0L;
    for (double l : logits[t]) z += std::exp(static_cast<long double>(l));
    total += std::log(z) - logits[t][static_cast<std::size_t>(targets[t])];
  }
  return static_cast<double>(total / static_cast<long double>(logits.size()));
}

Mat time_mix(const Mat& x, const TimeMixParams& p) {
  const Mat r = matmul(x, to_mat(p.w_r));
  const Mat k = matmul(x, to_mat(p.w_k));
  const Mat v = matmul(x, to_mat(p.w_v));
  Vec w = to_vec(p.decay_raw);
  for (double& d : w) d = softplus(d);
  const Mat mixed = matmul(wkv(k, v, w), to_mat(p.w_kv));
  Mat out = mixed;
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t c = 0; c < out[t].size(); ++c) out[t][c] = sigmoid(r[t][c]) * mixed[t][c];
  return out;
}

Mat channel_mix(const Mat& x, const ChannelMixParams& p) {
  Mat hidden = matmul(x, to_mat(p.w_k));
  for (auto& row : hidden)
    for (double& h : row) h = h > 0.0 ? h * h : 0.0;
  const Mat value = matmul(hidden, to_mat(p.w_v));
  const Mat gate = matmul(x, to_mat(p.w_r));
  Mat out = value;
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t c = 0; c < out[t].size(); ++c) out[t][c] = sigmoid(gate[t][c]) * value[t][c];
  return out;
}

namespace {

Mat ln_rows(const Mat& x, const LayerNormParams& p) {
  Mat out;
  for (const auto& row : x) out.push_back(layer_norm(row, to_vec(p.gamma), to_vec(p.beta)));
  return out;
}

Mat shift(const Mat& h, const Enhancement& e) {
  const std::size_t d = h.empty() ? 0 : h[0].size();
  const Mat wg = to_mat(e.gate.w_g);
  const Vec bg = to_vec(e.gate.b_g), gamma = to_vec(e.gate.ln_gamma), beta = to_vec(e.gate.ln_beta);
  Vec prev(d, 0.0);
  Mat out;
  for (const auto& row : h) {
    Vec g(d);
    if (e.gate.mode == GateMode::adaptive) {
      const Vec pre = vec_mat(row, wg);
      for (std::size_t c = 0; c < d; ++c) g[c] = sigmoid(pre[c] + bg[c]);
    } else {
      std::fill(g.begin(), g.end(), e.gate.mode == GateMode::fixed_one ? 1.0 : 0.0);
    }
    Vec enhanced(d);
    for (std::size_t c = 0; c < d; ++c) enhanced[c] = row[c] + prev[c] * g[c];
    Vec fin = e.use_layernorm ? layer_norm(enhanced, gamma, beta) : enhanced;
    prev = e.carry == ShiftCarry::enhanced_output ? fin : row;
    out.push_back(std::move(fin));
  }
  return out;
}

}  // namespace

Mat model_logits(const RwkvModel& model, std::span<const int> tokens) {
  const Mat emb = to_mat(model.embedding());
  Mat x;
  for (int t : tokens) x.push_back(emb.at(static_cast<std::size_t>(t)));
  for (const auto& layer : model.layers()) {
    Mat h = time_mix(ln_rows(x, layer.ln_time), layer.time);
    if (layer.enhancement) h = shift(h, *layer.enhancement);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += h[t][c];
    const Mat cm = channel_mix(ln_rows(x, layer.ln_channel), layer.channel);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += cm[t][c];
  }
  Mat logits = matmul(ln_rows(x, model.ln_out()), to_mat(model.head()));
  const Vec bias = to_vec(model.head_bias());
  for (auto& row : logits)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  return logits;
}

namespace {

using LD = long double;
using LVec = std::vector<LD>;
using LMat = std::vector<LVec>;

LMat lmat(const Tensor& t) {
  LMat m(t.dim(0), LVec(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  return m;
}

LVec lvec(const Tensor& t) { return LVec(t.data().begin(), t.data().end()); }

LMat lmatmul(const LMat& a, const LMat& b) {
  LMat out(a.size(), LVec(b[0].size(), 0.0L));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t p = 0; p < b.size(); ++p)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][p] * b[p][j];
  return out;
}

LD lsigmoid(LD x) { return 1.0L / (1.0L + std::exp(-x)); }

LMat lnorm(const LMat& x, const Tensor& gamma, const Tensor& beta) {
  const LVec g = lvec(gamma), b = lvec(beta);
  LMat out = x;
  for (auto& row : out) {
    const auto n = static_cast<LD>(row.size());
    LD mean = 0.0L, var = 0.0L;
    for (LD v : row) mean += v;
    mean /= n;
    for (LD v : row) var += (v - mean) * (v - mean);
    var /= n;
    const LD denom = std::sqrt(var + static_cast<LD>(kLayerNormEpsOracle));
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean) / denom * g[i] + b[i];
  }
  return out;
}

LMat ltime_mix(const LMat& x, const TimeMixParams& p) {
  const LMat r = lmatmul(x, lmat(p.w_r)), k = lmatmul(x, lmat(p.w_k)), v = lmatmul(x, lmat(p.w_v));
  LVec w = lvec(p.decay_raw);
  for (LD& d : w) d = d > 30.0L ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
  LMat avg(x.size(), LVec(w.size()));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t c = 0; c < w.size(); ++c) {
      LD num = 0.0L, den = 0.0L;
      for (std::size_t i = 0; i <= t; ++i) {
        const LD weight = std::exp(-static_cast<LD>(t - i) * w[c]);
        num += weight * k[i][c] * v[i][c];
        den += weight;
      }
      avg[t][c] = num / den;
    }
  LMat out = lmatmul(avg, lmat(p.w_kv));
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t c = 0; c < out[t].size(); ++c) out[t][c] *= lsigmoid(r[t][c]);
  return out;
}

LMat lchannel_mix(const LMat& x, const ChannelMixParams& p) {
  LMat hidden = lmatmul(x, lmat(p.w_k));
  for (auto& row : hidden)
    for (LD& h : row) h = h > 0.0L ? h * h : 0.0L;
  LMat out = lmatmul(hidden, lmat(p.w_v));
  const LMat gate = lmatmul(x, lmat(p.w_r));
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t c = 0; c < out[t].size(); ++c) out[t][c] *= lsigmoid(gate[t][c]);
  return out;
}

LMat lshift(const LMat& h, const Enhancement& e) {
  const std::size_t d = h[0].size();
  const LMat wg = lmat(e.gate.w_g);
  const LVec bg = lvec(e.gate.b_g);
  LVec prev(d, 0.0L);
  LMat out;
  for (const auto& row : h) {
    LVec g(d, e.gate.mode == GateMode::fixed_one ? 1.0L : 0.0L);
    if (e.gate.mode == GateMode::adaptive) {
      const LVec pre = lmatmul(LMat{row}, wg)[0];
      for (std::size_t c = 0; c < d; ++c) g[c] = lsigmoid(pre[c] + bg[c]);
    }
    LVec enhanced(d);
    for (std::size_t c = 0; c < d; ++c) enhanced[c] = row[c] + prev[c] * g[c];
    LVec fin = e.use_layernorm ? lnorm(LMat{enhanced}, e.gate.ln_gamma, e.gate.ln_beta)[0] : enhanced;
    prev = e.carry == ShiftCarry::enhanced_output ? fin : row;
    out.push_back(std::move(fin));
  }
  return out;
}

}  // namespace

long double model_loss_extended(const RwkvModel& model, std::span<const int> tokens) {
  if (tokens.size() < 2) throw std::invalid_argument("model_loss_extended: need at least two tokens");
  const LMat emb = lmat(model.embedding());
  LMat x;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) x.push_back(emb.at(static_cast<std::size_t>(tokens[t])));
  for (const auto& layer : model.layers()) {
    LMat h = ltime_mix(lnorm(x, layer.ln_time.gamma, layer.ln_time.beta), layer.time);
    if (layer.enhancement) h = lshift(h, *layer.enhancement);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += h[t][c];
    const LMat cm = lchannel_mix(lnorm(x, layer.ln_channel.gamma, layer.ln_channel.beta), layer.channel);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t c = 0; c < x[t].size(); ++c) x[t][c] += cm[t][c];
  }
  const LMat logits = lmatmul(lnorm(x, model.ln_out().gamma, model.ln_out().beta), lmat(model.head()));
  const LVec bias = lvec(model.head_bias());
  LD total = 0.0L;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    LD mx = -INFINITY;
    for (std::size_t c = 0; c < bias.size(); ++c) mx = std::max(mx, logits[t][c] + bias[c]);
    LD z = 0.0L;
    for (std::size_t c = 0; c < bias.size(); ++c) z += std::exp(logits[t][c] + bias[c] - mx);
    const auto target = static_cast<std::size_t>(tokens[t + 1]);
    total += mx + std::log(z) - (logits[t][target] + bias[target]);
  }
  return total / static_cast<LD>(logits.size());
}

GradCheckResult model_gradient_check(const RwkvModel& model, std::span<const int> tokens, double step) {
  auto params = model.parameters();
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(model.loss(tokens));
  }
  GradCheckResult result;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    auto values = params[ti].tensor.mutable_data();
    const auto grads = params[ti].tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      const double up = orig + step, down = orig - step;
      values[i] = up;
      const LD fp = model_loss_extended(model, tokens);
      values[i] = down;
      const LD fm = model_loss_extended(model, tokens);
      values[i] = orig;
      const auto numeric = static_cast<double>((fp - fm) / (static_cast<LD>(up) - static_cast<LD>(down)));
      const double err = std::abs(grads[i] - numeric) / (std::abs(grads[i]) + 1e-8);
      ++result.coordinates;
      if (err > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = err;
        result.worst_tensor = ti;
        result.worst_index = i;
        result.analytic = grads[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec grad(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::map<Ngram, int> ngram_counts(std::span<const int> tokens, int n) {
  std::map<Ngram, int> counts;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + un)];
  return counts;
}

double bleu(std::span<const int> candidate, const std::vector<std::vector<int>>& references, int max_n) {
  if (candidate.empty() || references.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = ngram_counts(candidate, n);
    int total = 0, matched = 0;
    for (const auto& [gram, count] : cand) {
      int best_ref = 0;
      for (const auto& ref : references) {
        const auto rc = ngram_counts(ref, n);
        const auto it = rc.find(gram);
        if (it != rc.end()) best_ref = std::max(best_ref, it->second);
      }
      total += count;
      matched += std::min(count, best_ref);
    }
    double p;
    if (matched > 0) {
      p = static_cast<double>(matched) / total;
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / (total + 1);
    }
    log_sum += std::log(p);
  }
  const auto c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references[0].size());
  for (const auto& ref : references) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

namespace {

Scores from_overlap(double overlap, double cand_total, double ref_total) {
  Scores s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

bool is_subsequence(const std::vector<int>& sub, std::span<const int> seq) {
  std::size_t j = 0;
  for (int t : seq)
    if (j < sub.size() && sub[j] == t) ++j;
  return j == sub.size();
}

}  // namespace

Scores rouge_n(std::span<const int> candidate, std::span<const int> reference, int n) {
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  int overlap = 0, ct = 0, rt = 0;
  for (const auto& [g, c] : cand) {
    ct += c;
    const auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : ref) rt += c;
  return from_overlap(overlap, ct, rt);
}

std::size_t lcs_exhaustive(std::span<const int> a, std::span<const int> b) {
  const auto shorter = a.size() <= b.size() ? a : b;
  const auto longer = a.size() <= b.size() ? b : a;
  if (shorter.size() > 24) throw std::invalid_argument("lcs_exhaustive: input too long");
  std::size_t best = 0;
  const std::uint64_t subsets = std::uint64_t{1} << shorter.size();
  std::vector<int> sub;
  for (std::uint64_t mask = 0; mask < subsets; ++mask) {
    const auto bits = static_cast<std::size_t>(std::popcount(mask));
    if (bits <= best) continue;
    sub.clear();
    for (std::size_t i = 0; i < shorter.size(); ++i)
      if (mask >> i & 1u) sub.push_back(shorter[i]);
    if (is_subsequence(sub, longer)) best = bits;
  }
  return best;
}

Scores rouge_l(std::span<const int> candidate, std::span<const int> reference) {
  return from_overlap(static_cast<double>(lcs_exhaustive(candidate, reference)), static_cast<double>(candidate.size()),
                      static_cast<double>(reference.size()));
}

std::vector<GoldenPair> load_golden_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read golden pairs from " + path);
  std::unordered_map<std::string, int> ids;
  auto words = [&](const std::string& text) {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
    return out;
  };
  std::vector<GoldenPair> pairs;
  bool open = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') {
      open = false;
      continue;
    }
    if (line.rfind("cand:", 0) == 0) {
      pairs.push_back({words(line.substr(5)), {}});
      open = true;
    } else if (line.rfind("ref:", 0) == 0 && open) {
      pairs.back().references.push_back(words(line.substr(4)));
    } else {
      throw std::runtime_error("golden pairs: unexpected line '" + line + "'");
    }
  }
  return pairs;
}

namespace {

class UniformStream final : public DecodeStream {
 public:
  explicit UniformStream(int vocab) : vocab_(vocab) {}
  std::vector<double> step(int) override { return std::vector<double>(static_cast<std::size_t>(vocab_), 0.0); }

 private:
  int vocab_;
};

}  // namespace

std::vector<double> UniformModel::score(std::span<const int> tokens) const {
  return std::vector<double>(tokens.size() * static_cast<std::size_t>(vocab_), 0.0);
}

std::unique_ptr<DecodeStream> UniformModel::open_stream() const { return std::make_unique<UniformStream>(vocab_); }

}  // namespace rwkvas::oracle
