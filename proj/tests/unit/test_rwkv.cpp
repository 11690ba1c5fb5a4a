#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "rwkvas/gradcheck.hpp"
#include "rwkvas/ops.hpp"
#include "rwkvas/rwkv.hpp"
#include "rwkvas_oracles/oracles.hpp"

using namespace rwkvas;
using rwkvas::testing::random_tensor;
using rwkvas::testing::tiny_config;

namespace {

Tensor random_decay(std::size_t d, std::uint64_t seed, double hi = 3.0) {
  Rng rng(seed);
  return Tensor::vector(uniform_values(rng, d, 0.0, hi));
}

Tensor eye(std::size_t d) {
  Tensor t = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) t.mutable_data()[i * d + i] = 1.0;
  return t;
}

Tensor run_steps(const Tensor& k, const Tensor& v, const Tensor& w) {
  const std::size_t T = k.dim(0), d = k.dim(1);
  WkvState s = WkvState::initial(d);
  std::vector<double> out;
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor kt = Tensor::vector(std::vector<double>(k.data().begin() + t * d, k.data().begin() + (t + 1) * d));
    const Tensor vt = Tensor::vector(std::vector<double>(v.data().begin() + t * d, v.data().begin() + (t + 1) * d));
    auto [o, next] = wkv_step(kt, vt, w, s);
    s = std::move(next);
    out.insert(out.end(), o.data().begin(), o.data().end());
  }
  return Tensor::from({T, d}, std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Tensor& a, const oracle::Mat& b) {
  double m = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r)
    for (std::size_t c = 0; c < b[r].size(); ++c) m = std::max(m, std::abs(a.at(r, c) - b[r][c]));
  return m;
}

}  // namespace

TEST(ProjectRkv, IdentityAndZero) {
  LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 1);
  p.time.w_r = p.time.w_k = p.time.w_v = eye(4);
  const Tensor x = random_tensor({4}, 2);
  const auto [r, k, v] = project_rkv(x, p.time);
  EXPECT_EQ(r.to_vector(), x.to_vector());
  EXPECT_EQ(k.to_vector(), x.to_vector());
  EXPECT_EQ(v.to_vector(), x.to_vector());
  const auto z = project_rkv(Tensor::zeros({4}), LayerParams::init(tiny_config(Variant::baseline, 4), 0, 1).time);
  for (const Tensor* t : {&z.r, &z.k, &z.v})
    for (double e : t->data()) EXPECT_EQ(e, 0.0);
  EXPECT_THROW(project_rkv(Tensor::zeros({5}), p.time), DimensionError);
}

TEST(ProjectRkv, MatchesMatmulOracle) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 6), 0, 3);
  const Tensor x = random_tensor({6}, 4);
  const auto k = project_rkv(x, p.time).k;
  const auto expected = oracle::vec_mat(x.to_vector(), oracle::to_mat(p.time.w_k));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(k[i], expected[i], 1e-14);
}

TEST(WkvParallel, SingleTokenIsProduct) {
  const Tensor k = random_tensor({1, 5}, 1), v = random_tensor({1, 5}, 2);
  const Tensor out = wkv_parallel(k, v, random_decay(5, 3));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(out[c], k[c] * v[c]);
}

TEST(WkvParallel, ZeroDecayIsRunningMean) {
  const std::size_t T = 40, d = 3;
  const Tensor k = random_tensor({T, d}, 4), v = random_tensor({T, d}, 5);
  const Tensor out = wkv_parallel(k, v, Tensor::zeros({d}));
  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      s += k.at(t, c) * v.at(t, c);
      EXPECT_NEAR(out.at(t, c), s / static_cast<double>(t + 1), 1e-13);
    }
  }
}

TEST(WkvParallel, MatchesQuadraticOracle) {
  const Tensor k = random_tensor({16, 8}, 6), v = random_tensor({16, 8}, 7);
  const Tensor w = random_decay(8, 8);
  EXPECT_LT(max_abs_diff(wkv_parallel(k, v, w), oracle::wkv(oracle::to_mat(k), oracle::to_mat(v), w.to_vector())), 1e-10);
}

TEST(WkvParallel, LargeDecayKeepsOnlyCurrentToken) {
  const Tensor k = random_tensor({10, 4}, 9), v = random_tensor({10, 4}, 10);
  const Tensor out = wkv_parallel(k, v, Tensor::full({4}, 50.0));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], k[i] * v[i], 1e-6);
}

TEST(WkvParallel, ConvexCombination) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t T = 20, d = 4;
    const Tensor k = random_tensor({T, d}, seed), v = random_tensor({T, d}, seed + 50);
    const Tensor out = wkv_parallel(k, v, random_decay(d, seed + 99));
    for (std::size_t c = 0; c < d; ++c) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t t = 0; t < T; ++t) {
        lo = std::min(lo, k.at(t, c) * v.at(t, c));
        hi = std::max(hi, k.at(t, c) * v.at(t, c));
        EXPECT_GE(out.at(t, c), lo - 1e-12);
        EXPECT_LE(out.at(t, c), hi + 1e-12);
      }
    }
  }
}

TEST(WkvParallel, StableOnLongSequences) {
  const std::size_t T = 4096, d = 3;
  Tensor k = random_tensor({T, d}, 11), v = random_tensor({T, d}, 12);
  for (double& x : k.mutable_data()) x *= 30.0;  // |K V| up to about 1e3
  const Tensor w = Tensor::vector({0.0, 0.17, 700.0 / T});
  const Tensor out = wkv_parallel(k, v, w);
  EXPECT_TRUE(out.all_finite());
  EXPECT_LT(max_abs_diff(out, run_steps(k, v, w)), 1e-8);
}

TEST(WkvParallel, RejectsNegativeDecayAndBadShapes) {
  const Tensor k = random_tensor({3, 2}, 1), v = random_tensor({3, 2}, 2);
  EXPECT_THROW(wkv_parallel(k, v, Tensor::vector({0.1, -0.1})), std::invalid_argument);
  EXPECT_THROW(wkv_parallel(k, random_tensor({3, 3}, 2), Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(wkv_parallel(k, v, Tensor::zeros({3})), DimensionError);
}

TEST(WkvParallel, Gradient) {
  Tensor k = random_tensor({37, 3}, 21, 1.0, true);  // spans two chunks
  Tensor v = random_tensor({37, 3}, 22, 1.0, true);
  Tensor raw = random_tensor({3}, 23, 1.0, true);
  const Tensor w = random_tensor({37, 3}, 24);
  std::vector<Tensor> leaves{k, v, raw};
  const auto r = finite_difference_check([&] { return sum(mul(wkv_parallel(k, v, softplus(raw)), w)); }, leaves);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(WkvStep, FirstStepAndEqualTokens) {
  const Tensor k = Tensor::vector({2.0, -1.0}), v = Tensor::vector({3.0, 4.0});
  auto [o1, s1] = wkv_step(k, v, Tensor::zeros({2}), WkvState::initial(2));
  EXPECT_EQ(o1.to_vector(), (std::vector<double>{6.0, -4.0}));
  auto [o2, s2] = wkv_step(k, v, Tensor::zeros({2}), s1);
  EXPECT_DOUBLE_EQ(o2[0], 6.0);
  EXPECT_DOUBLE_EQ(o2[1], -4.0);
  for (double den : s2.den.data()) EXPECT_GT(den, 0.0);
}

TEST(WkvStep, StateWidthMismatch) {
  EXPECT_THROW(wkv_step(Tensor::zeros({3}), Tensor::zeros({3}), Tensor::zeros({3}), WkvState::initial(2)),
               DimensionError);
}

TEST(WkvStep, ShiftInvariance) {
  // Rescaling num and den together while compensating max_exp leaves the output unchanged.
  const Tensor k = random_tensor({2}, 1), v = random_tensor({2}, 2), w = random_decay(2, 3);
  auto [o1, s1] = wkv_step(k, v, w, WkvState::initial(2));
  WkvState shifted{mul(s1.num, std::exp(-5.0)), mul(s1.den, std::exp(-5.0)), add(s1.max_exp, 5.0)};
  const auto a = wkv_step(k, v, w, s1).first;
  const auto b = wkv_step(k, v, w, shifted).first;
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(a[c], b[c], 1e-14);
}

TEST(WkvStep, MatchesParallel) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor k = random_tensor({32, 5}, seed), v = random_tensor({32, 5}, seed + 100);
    const Tensor w = random_decay(5, seed + 200);
    EXPECT_LT(max_abs_diff(run_steps(k, v, w), wkv_parallel(k, v, w)), 1e-8);
  }
}

TEST(TimeMix, ClosedReceptanceGivesZero) {
  LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 5);
  // No bias on R, so the gate is closed with a strongly negative map on a positive input.
  p.time.w_r = mul(eye(4), -1e4);
  const Tensor x = Tensor::from({3, 4}, std::vector<double>(12, 1.0));
  for (double h : time_mix_forward(x, p.time).to_vector()) EXPECT_NEAR(h, 0.0, 1e-12);
}

TEST(TimeMix, SingleTokenIdentityOutput) {
  LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 6);
  p.time.w_kv = eye(4);
  const Tensor x = random_tensor({1, 4}, 7);
  const auto [r, k, v] = project_rkv(x, p.time);
  const Tensor h = time_mix_forward(x, p.time);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(h[c], oracle::sigmoid(r[c]) * k[c] * v[c], 1e-15);
}

TEST(TimeMix, MatchesCompositionalOracle) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 6), 0, 8);
  const Tensor x = random_tensor({9, 6}, 9);
  EXPECT_LT(max_abs_diff(time_mix_forward(x, p.time), oracle::time_mix(oracle::to_mat(x), p.time)), 1e-12);
}

TEST(ChannelMix, ZeroInputAndSaturatedGate) {
  LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 10);
  for (double y : channel_mix_forward(Tensor::zeros({2, 4}), p.channel).to_vector()) EXPECT_EQ(y, 0.0);
  const Tensor x = Tensor::from({1, 4}, {0.5, 1.0, 0.25, 2.0});
  p.channel.w_r = mul(eye(4), 1e3);
  const Tensor out = channel_mix_forward(x, p.channel);
  const Tensor ffn = linear(square(relu(linear(x, p.channel.w_k))), p.channel.w_v);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out[c], ffn[c], 1e-12);
}

TEST(ChannelMix, MatchesFormulaOracle) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 5), 0, 11);
  const Tensor x = random_tensor({7, 5}, 12);
  EXPECT_LT(max_abs_diff(channel_mix_forward(x, p.channel), oracle::channel_mix(oracle::to_mat(x), p.channel)), 1e-12);
}

TEST(Block, ZeroOutputWeightsPassThrough) {
  LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 6), 0, 13);
  p.time.w_kv = Tensor::zeros({6, 6});
  p.channel.w_v = Tensor::zeros({24, 6});
  const Tensor x = random_tensor({5, 6}, 14);
  EXPECT_EQ(block_forward(x, p).to_vector(), x.to_vector());
}

TEST(Block, RecurrentMatchesParallelAllVariants) {
  for (Variant v : kAllVariants) {
    const LayerParams p = LayerParams::init(tiny_config(v, 8), 0, 15);
    const Tensor x = random_tensor({32, 8}, 16);
    LayerState state = LayerState::initial(8);
    EXPECT_LT(max_abs_diff(block_forward(x, p), block_forward_recurrent(x, p, state)), 1e-8) << variant_name(v);
  }
}

TEST(Block, SingleTokenBaselineComposition) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 17);
  const Tensor x = random_tensor({1, 4}, 18);
  const Tensor ln1 = layer_norm(x, p.ln_time.gamma, p.ln_time.beta);
  const auto [r, k, v] = project_rkv(ln1, p.time);
  const Tensor h = mul(sigmoid(r), linear(mul(k, v), p.time.w_kv));
  const Tensor mid = add(x, h);
  const Tensor expected = add(mid, channel_mix_forward(layer_norm(mid, p.ln_channel.gamma, p.ln_channel.beta), p.channel));
  EXPECT_LT(max_abs_diff(block_forward(x, p), expected), 1e-14);
}

TEST(Block, DimensionMismatch) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 19);
  EXPECT_THROW(block_forward(Tensor::zeros({2, 5}), p), DimensionError);
  LayerState s = LayerState::initial(4);
  EXPECT_THROW(block_step(Tensor::zeros({5}), p, s), DimensionError);
}

TEST(Block, GradientThroughAllLayerParams) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 4), 0, 20);
  const Tensor x = random_tensor({6, 4}, 21);
  const Tensor w = random_tensor({6, 4}, 22);
  std::vector<Tensor> leaves{p.ln_time.gamma, p.ln_time.beta, p.time.w_r, p.time.w_k, p.time.w_v, p.time.decay_raw,
                             p.time.w_kv, p.ln_channel.gamma, p.ln_channel.beta, p.channel.w_k, p.channel.w_v,
                             p.channel.w_r};
  const auto r = finite_difference_check([&] { return sum(mul(block_forward(x, p), w)); }, leaves);
  EXPECT_LT(r.max_relative_error, 1e-4) << "tensor " << r.worst_tensor << " index " << r.worst_index;
}

TEST(LayerInit, DecaysArePositiveAndSpread) {
  const LayerParams p = LayerParams::init(tiny_config(Variant::baseline, 16), 0, 23);
  const Tensor w = effective_decay(p.time);
  EXPECT_NEAR(w[0], 0.02, 1e-12);
  EXPECT_NEAR(w[15], 3.0, 1e-12);
  for (std::size_t i = 1; i < 16; ++i) EXPECT_GT(w[i], w[i - 1]);
}
