// Copyright 2026 The relfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "relfuse/errors.hpp"
#include "relfuse/layers.hpp"

namespace relfuse {
namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

double project(const TensorD& y, const TensorD& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

// --- conv1d ----------------------------------------------------------------

TEST(Conv1d, DirectConvolution) {
  const TensorD x({4, 1}, {1, 2, 3, 4});
  const TensorD k({3, 1, 1}, {1, 0, -1});
  const auto y = conv1d_forward(x, k, TensorD::zeros({1}));
  EXPECT_EQ(y, TensorD({2, 1}, {-2, -2}));
}

TEST(Conv1d, MatchesDirectOracleOnRandomInput) {
  std::mt19937_64 gen(12);
  const auto x = oracle::random_tensor<double>({9, 3}, gen);
  const auto k = oracle::random_tensor<double>({5, 3, 4}, gen);
  const auto b = oracle::random_tensor<double>({4}, gen);
  const auto y = conv1d_forward(x, k, b);
  const auto want = oracle::conv1d(x.storage(), 9, 3, k.storage(), 5, 4, b.storage());
  ASSERT_EQ(y.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
}

TEST(Conv1d, DeltaKernelSlicesCentre) {
  std::mt19937_64 gen(1);
  const auto x = oracle::random_tensor<double>({6, 2}, gen);
  TensorD k({3, 2, 2});
  k[(1 * 2 + 0) * 2 + 0] = 1;  // centre tap, channel c -> output c
  k[(1 * 2 + 1) * 2 + 1] = 1;
  const auto y = conv1d_forward(x, k, TensorD::zeros({2}));
  EXPECT_EQ(y, slice_rows(x, 1, 4));
}

TEST(Conv1d, ZeroInputGivesBias) {
  std::mt19937_64 gen(2);
  const auto k = oracle::random_tensor<double>({3, 2, 3}, gen);
  const auto b = TensorD::vector({0.5, -1, 2});
  const auto y = conv1d_forward(TensorD::zeros({5, 2}), k, b);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t o = 0; o < 3; ++o) EXPECT_EQ(y(t, o), b[o]);
}

TEST(Conv1d, ShortSequenceRejected) {
  try {
    conv1d_forward(TensorD::zeros({2, 1}), TensorD::zeros({3, 1, 1}), TensorD::zeros({1}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("sequence shorter than kernel"), std::string::npos);
  }
}

TEST(Conv1d, EvenKernelRejected) {
  EXPECT_THROW(conv1d_forward(TensorD::zeros({5, 1}), TensorD::zeros({2, 1, 1}), TensorD::zeros({1})),
               ShapeError);
}

// --- maxpool ---------------------------------------------------------------

TEST(MaxPool, Enumeration) {
  const auto r = maxpool1d_forward(TensorD({4, 1}, {1, 3, 2, 5}), 2);
  EXPECT_EQ(r.output, TensorD({2, 1}, {3, 5}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{1, 3}));
}

TEST(MaxPool, PoolOneIsIdentity) {
  std::mt19937_64 gen(3);
  const auto x = oracle::random_tensor<double>({5, 3}, gen);
  EXPECT_EQ(maxpool1d_forward(x, 1).output, x);
}

TEST(MaxPool, TiesPickFirstRow) {
  const auto r = maxpool1d_forward(TensorD::full({6, 2}, 4.0), 3);
  EXPECT_EQ(r.output, TensorD::full({2, 2}, 4.0));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 1, 6, 7}));
}

TEST(MaxPool, TrailingRowsDroppedAndZeroPoolRejected) {
  EXPECT_EQ(maxpool1d_forward(TensorD::zeros({5, 2}), 2).output.shape(), (Shape{2, 2}));
  EXPECT_THROW(maxpool1d_forward(TensorD::zeros({4, 1}), 0), ShapeError);
}

TEST(MaxPool, BackwardRoutesEachElementOnce) {
  std::mt19937_64 gen(4);
  const auto x = oracle::random_tensor<double>({7, 3}, gen);
  MaxPoolCache<double> cache;
  const auto r = maxpool1d_forward(x, 2, &cache);
  const auto up = oracle::random_tensor<double>(r.output.shape(), gen);
  const auto dx = maxpool1d_backward(cache, up);
  double in = 0, out = 0;
  std::size_t nonzero = 0;
  for (double v : dx.data()) {
    in += std::abs(v);
    nonzero += v != 0;
  }
  for (double v : up.data()) out += std::abs(v);
  EXPECT_DOUBLE_EQ(in, out);
  EXPECT_EQ(nonzero, up.size());
}

// --- batchnorm + relu ------------------------------------------------------

BatchNormParams<double> unit_bn(std::size_t c) {
  return {TensorD::full({c}, 1.0), TensorD::zeros({c}), TensorD::zeros({c}),
          TensorD::full({c}, 1.0)};
}

TEST(BatchNorm, PreNormalizedInputPassesThroughRelu) {
  // Columns with exact mean 0 and biased variance 1.
  const TensorD x({4, 2}, {1, -1, -1, 1, 1, 1, -1, -1});
  const auto r = batchnorm_relu_forward(x, unit_bn(2), Phase::kTrain);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r.output[i], std::max(x[i], 0.0), 1e-3);
}

TEST(BatchNorm, LargeNegativeBetaClampsToZero) {
  std::mt19937_64 gen(5);
  auto bn = unit_bn(3);
  bn.beta = TensorD::full({3}, -100.0);
  const auto r = batchnorm_relu_forward(oracle::random_tensor<double>({6, 3}, gen), bn, Phase::kTrain);
  EXPECT_EQ(r.output, TensorD::zeros({6, 3}));
}

TEST(BatchNorm, TwoSampleHandOracle) {
  const auto r = batchnorm_relu_forward(TensorD({2, 1}, {-1, 1}), unit_bn(1), Phase::kTrain);
  EXPECT_EQ(r.output[0], 0.0);
  EXPECT_NEAR(r.output[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-12);
  EXPECT_NEAR(r.output[1], 1.0, 1e-5);
}

TEST(BatchNorm, RunningStatsUseMomentum) {
  const TensorD x({2, 1}, {1, 3});
  const auto r = batchnorm_relu_forward(x, unit_bn(1), Phase::kTrain);
  ASSERT_TRUE(r.updated.has_value());
  EXPECT_NEAR(r.updated->mean[0], 0.99 * 0 + 0.01 * 2, 1e-15);
  EXPECT_NEAR(r.updated->var[0], 0.99 * 1 + 0.01 * 1, 1e-15);
}

TEST(BatchNorm, InferUsesRunningStats) {
  auto bn = unit_bn(1);
  bn.running_mean[0] = 2;
  bn.running_var[0] = 4;
  const auto r = batchnorm_relu_forward(TensorD({1, 1}, {6}), bn, Phase::kInfer);
  EXPECT_FALSE(r.updated.has_value());
  EXPECT_NEAR(r.output[0], 4 / std::sqrt(4 + 1e-5), 1e-12);
}

TEST(BatchNorm, SingleRowTrainBatchRejected) {
  EXPECT_THROW(batchnorm_relu_forward(TensorD::zeros({1, 2}), unit_bn(2), Phase::kTrain), ShapeError);
}

// --- dropout ---------------------------------------------------------------

TEST(Dropout, InferIsBitwiseIdentity) {
  std::mt19937_64 gen(6);
  const auto x = oracle::random_tensor<float>({8, 8}, gen);
  Rng rng(1);
  EXPECT_EQ(dropout_forward(x, 0.25, rng, Phase::kInfer), x);
}

TEST(Dropout, ZeroRateIsIdentity) {
  std::mt19937_64 gen(7);
  const auto x = oracle::random_tensor<float>({8, 8}, gen);
  Rng rng(1);
  EXPECT_EQ(dropout_forward(x, 0.0, rng, Phase::kTrain), x);
  EXPECT_EQ(dropout_forward(x, 0.0, rng, Phase::kInfer), x);
}

TEST(Dropout, MonteCarloMeanPreserved) {
  const auto x = TensorD::full({100000}, 1.0);
  Rng rng(123);
  DropoutCache<double> cache;
  const auto y = dropout_forward(x, 0.25, rng, Phase::kTrain, &cache);
  const double mean = sum_all(y) / 100000.0;
  EXPECT_NEAR(mean, 1.0, 0.02);
  for (double v : y.data()) ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
}

TEST(Dropout, RateOutsideRangeRejected) {
  Rng rng(0);
  EXPECT_THROW(dropout_forward(TensorD::zeros({2}), 1.0, rng, Phase::kTrain), ConfigError);
  EXPECT_THROW(dropout_forward(TensorD::zeros({2}), -0.1, rng, Phase::kTrain), ConfigError);
}

// --- dense -----------------------------------------------------------------

TEST(Dense, IdentityWeights) {
  std::mt19937_64 gen(8);
  const auto x = oracle::random_tensor<double>({3, 4}, gen);
  EXPECT_EQ(dense_forward(x, TensorD::identity(4), TensorD::zeros({4}), Activation::kNone), x);
}

TEST(Dense, HandAffine) {
  const auto y = dense_forward(TensorD::matrix({{1, 2}}), TensorD::matrix({{1}, {1}}),
                               TensorD::vector({0.5}), Activation::kNone);
  EXPECT_EQ(y, TensorD::matrix({{3.5}}));
}

TEST(Dense, ReluSaturation) {
  const auto y = dense_forward(TensorD::matrix({{1, 2}}), TensorD::matrix({{-1}, {-1}}),
                               TensorD::vector({0}), Activation::kRelu);
  EXPECT_EQ(y, TensorD::zeros({1, 1}));
}

TEST(Dense, ShapeMismatchRejected) {
  EXPECT_THROW(dense_forward(TensorD::zeros({1, 3}), TensorD::zeros({2, 2}), TensorD::zeros({2}),
                             Activation::kNone),
               ShapeError);
}

TEST(Dense, IdentityBackwardPassesUpstream) {
  std::mt19937_64 gen(9);
  DenseCache<double> cache;
  dense_forward(oracle::random_tensor<double>({3, 4}, gen), TensorD::identity(4),
                TensorD::zeros({4}), Activation::kNone, &cache);
  const auto up = oracle::random_tensor<double>({3, 4}, gen);
  EXPECT_EQ(dense_backward(cache, TensorD::identity(4), up).input, up);
}

// --- lstm ------------------------------------------------------------------

LstmParams<double> zero_lstm(std::size_t din, std::size_t h) {
  return {TensorD::zeros({din, 4 * h}), TensorD::zeros({h, 4 * h}), TensorD::zeros({4 * h})};
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  std::mt19937_64 gen(10);
  const auto h = lstm_forward(oracle::random_tensor<double>({4, 3}, gen), zero_lstm(3, 5));
  EXPECT_EQ(h, TensorD::zeros({4, 5}));
}

TEST(Lstm, ForgetGateAloneCannotMoveZeroState) {
  std::mt19937_64 gen(11);
  auto p = zero_lstm(3, 4);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t u = 4; u < 8; ++u) p.kernel(r, u) = 2.0 * (gen() % 2 ? 1 : -1);
  for (std::size_t u = 4; u < 8; ++u) p.bias[u] = 1.0;
  const auto h = lstm_forward(oracle::random_tensor<double>({1, 3}, gen), p);
  EXPECT_EQ(h, TensorD::zeros({1, 4}));
}

TEST(Lstm, SingleStepClosedForm) {
  // One unit, one input: every gate pre-activation is w * x + b.
  LstmParams<double> p{TensorD({1, 4}, {0.3, -0.2, 0.5, 0.7}), TensorD::zeros({1, 4}),
                       TensorD::vector({0.1, 1.0, -0.1, 0.2})};
  const double x = 1.5;
  auto sig = [](double z) { return 1 / (1 + std::exp(-z)); };
  const double i = sig(0.3 * x + 0.1), g = std::tanh(0.5 * x - 0.1), o = sig(0.7 * x + 0.2);
  const auto h = lstm_forward(TensorD({1, 1}, {x}), p);
  EXPECT_NEAR(h[0], o * std::tanh(i * g), 1e-14);
}

// --- softmax cross-entropy -------------------------------------------------

TEST(SoftmaxXent, EqualLogitsGiveLnK) {
  const std::vector<int> labels{0, 3};
  const auto r = softmax_xent(TensorD::full({2, 5}, 0.7), labels);
  for (double p : r.probs.data()) EXPECT_NEAR(p, 0.2, 1e-15);
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-14);
}

TEST(SoftmaxXent, SaturatedLogitGivesZeroLoss) {
  const std::vector<int> labels{1};
  const auto r = softmax_xent(TensorD::matrix({{0, 1000, 0}}), labels);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(SoftmaxXent, ClosedForm) {
  const std::vector<int> labels{1};
  const auto r = softmax_xent(TensorD::matrix({{0, std::log(3.0)}}), labels);
  EXPECT_NEAR(r.probs[0], 0.25, 1e-15);
  EXPECT_NEAR(r.probs[1], 0.75, 1e-15);
  EXPECT_NEAR(r.loss, -std::log(0.75), 1e-15);
  const auto d = softmax_xent_backward(r.probs, labels);
  EXPECT_NEAR(d[0], 0.25, 1e-15);
  EXPECT_NEAR(d[1], -0.25, 1e-15);
}

TEST(SoftmaxXent, LabelOutOfRangeRejected) {
  const std::vector<int> labels{3};
  EXPECT_THROW(softmax_xent(TensorD::zeros({1, 3}), labels), ShapeError);
}

TEST(SoftmaxXent, RowsSumToOne) {
  std::mt19937_64 gen(13);
  const std::vector<int> labels{0, 1, 2, 3, 4, 0};
  const auto r = softmax_xent(oracle::random_tensor<float>({6, 5}, gen, 5.0), labels);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_GT(r.probs(i, c), 0.0f);
      EXPECT_LT(r.probs(i, c), 1.0f);
      s += r.probs(i, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

// --- caches ----------------------------------------------------------------

TEST(Caches, ConsumedOnce) {
  std::mt19937_64 gen(14);
  const auto w = oracle::random_tensor<double>({3, 2}, gen);
  DenseCache<double> cache;
  dense_forward(oracle::random_tensor<double>({4, 3}, gen), w, TensorD::zeros({2}),
                Activation::kRelu, &cache);
  const auto up = TensorD::zeros({4, 2});
  dense_backward(cache, w, up);
  EXPECT_THROW(dense_backward(cache, w, up), CacheError);
  DenseCache<double> never;
  EXPECT_THROW(dense_backward(never, w, up), CacheError);
}

TEST(Caches, UpstreamShapeMismatch) {
  std::mt19937_64 gen(15);
  Conv1dCache<double> cache;
  const auto k = oracle::random_tensor<double>({3, 2, 2}, gen);
  conv1d_forward(oracle::random_tensor<double>({6, 2}, gen), k, TensorD::zeros({2}), &cache);
  EXPECT_THROW(conv1d_backward(cache, k, TensorD::zeros({3, 2})), CacheError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 gen(16);
  LstmParams<double> p{oracle::random_tensor<double>({3, 8}, gen),
                       oracle::random_tensor<double>({2, 8}, gen),
                       oracle::random_tensor<double>({8}, gen)};
  LstmCache<double> cache;
  lstm_forward(oracle::random_tensor<double>({3, 3}, gen), p, &cache);
  const auto g = lstm_backward(cache, p, TensorD::zeros({3, 2}));
  EXPECT_EQ(g.input, TensorD::zeros({3, 3}));
  EXPECT_EQ(g.kernel, TensorD::zeros({3, 8}));
  EXPECT_EQ(g.recurrent_kernel, TensorD::zeros({2, 8}));
  EXPECT_EQ(g.bias, TensorD::zeros({8}));

  BatchNormCache<double> bc;
  batchnorm_relu_forward(oracle::random_tensor<double>({4, 2}, gen), unit_bn(2), Phase::kTrain, {}, &bc);
  const auto bg = batchnorm_relu_backward(bc, unit_bn(2), TensorD::zeros({4, 2}));
  EXPECT_EQ(bg.input, TensorD::zeros({4, 2}));
  EXPECT_EQ(bg.gamma, TensorD::zeros({2}));
}

// --- finite differences (independent of the library's gradcheck) -----------

TEST(FiniteDifference, Dense) {
  for (auto seed : kSeeds) {
    std::mt19937_64 gen(seed);
    auto x = oracle::random_tensor<double>({4, 5}, gen);
    auto w = oracle::random_tensor<double>({5, 3}, gen);
    auto b = oracle::random_tensor<double>({3}, gen);
    const auto r = oracle::random_tensor<double>({4, 3}, gen);
    for (auto act : {Activation::kNone, Activation::kRelu}) {
      DenseCache<double> cache;
      dense_forward(x, w, b, act, &cache);
      const auto g = dense_backward(cache, w, r);
      auto f = [&] { return project(dense_forward(x, w, b, act), r); };
      EXPECT_LT(oracle::max_rel_error(g.input.data(), oracle::numeric_grad(x, f)), 1e-5);
      EXPECT_LT(oracle::max_rel_error(g.weight.data(), oracle::numeric_grad(w, f)), 1e-5);
      EXPECT_LT(oracle::max_rel_error(g.bias.data(), oracle::numeric_grad(b, f)), 1e-5);
    }
  }
}

TEST(FiniteDifference, Conv1d) {
  for (auto seed : kSeeds) {
    std::mt19937_64 gen(seed);
    auto x = oracle::random_tensor<double>({7, 3}, gen);
    auto k = oracle::random_tensor<double>({3, 3, 4}, gen);
    auto b = oracle::random_tensor<double>({4}, gen);
    const auto r = oracle::random_tensor<double>({5, 4}, gen);
    Conv1dCache<double> cache;
    conv1d_forward(x, k, b, &cache);
    const auto g = conv1d_backward(cache, k, r);
    auto f = [&] { return project(conv1d_forward(x, k, b), r); };
    EXPECT_LT(oracle::max_rel_error(g.input.data(), oracle::numeric_grad(x, f)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(g.kernel.data(), oracle::numeric_grad(k, f)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(g.bias.data(), oracle::numeric_grad(b, f)), 1e-5);
  }
}

TEST(FiniteDifference, BatchNormRelu) {
  for (auto seed : kSeeds) {
    std::mt19937_64 gen(seed);
    auto x = oracle::random_tensor<double>({6, 3}, gen, 2.0);
    auto bn = unit_bn(3);
    bn.gamma = oracle::random_tensor<double>({3}, gen);
    bn.beta = oracle::random_tensor<double>({3}, gen, 0.5);
    const auto r = oracle::random_tensor<double>({6, 3}, gen);
    BatchNormCache<double> cache;
    batchnorm_relu_forward(x, bn, Phase::kTrain, {}, &cache);
    const auto g = batchnorm_relu_backward(cache, bn, r);
    auto f = [&] { return project(batchnorm_relu_forward(x, bn, Phase::kTrain).output, r); };
    EXPECT_LT(oracle::max_rel_error(g.input.data(), oracle::numeric_grad(x, f)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(g.gamma.data(), oracle::numeric_grad(bn.gamma, f)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(g.beta.data(), oracle::numeric_grad(bn.beta, f)), 1e-5);
  }
}

TEST(FiniteDifference, LstmThreeSteps) {
  for (auto seed : kSeeds) {
    std::mt19937_64 gen(seed);
    auto x = oracle::random_tensor<double>({3, 4}, gen);
    LstmParams<double> p{oracle::random_tensor<double>({4, 20}, gen, 0.5),
                         oracle::random_tensor<double>({5, 20}, gen, 0.5),
                         oracle::random_tensor<double>({20}, gen, 0.5)};
    const auto r = oracle::random_tensor<double>({3, 5}, gen);
    LstmCache<double> cache;
    lstm_forward(x, p, &cache);
    const auto g = lstm_backward(cache, p, r);
    auto f = [&] { return project(lstm_forward(x, p), r); };
    EXPECT_LT(oracle::max_rel_error(g.input.data(), oracle::numeric_grad(x, f)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(g.kernel.data(), oracle::numeric_grad(p.kernel, f)), 1e-5);
    EXPECT_LT(oracle::max_rel_error(g.recurrent_kernel.data(),
                                    oracle::numeric_grad(p.recurrent_kernel, f)),
              1e-5);
    EXPECT_LT(oracle::max_rel_error(g.bias.data(), oracle::numeric_grad(p.bias, f)), 1e-5);
  }
}

TEST(FiniteDifference, SoftmaxXent) {
  for (auto seed : kSeeds) {
    std::mt19937_64 gen(seed);
    auto z = oracle::random_tensor<double>({4, 6}, gen, 2.0);
    const std::vector<int> labels{0, 5, 2, 2};
    const auto d = softmax_xent_backward(softmax_xent(z, labels).probs, labels);
    auto f = [&] { return softmax_xent(z, labels).loss; };
    EXPECT_LT(oracle::max_rel_error(d.data(), oracle::numeric_grad(z, f)), 1e-5);
  }
}

TEST(Glorot, BoundsAndDeterminism) {
  Rng a(3), b(3);
  const auto w = glorot_uniform<float>({10, 6}, 10, 6, a);
  const double limit = std::sqrt(6.0 / 16.0);
  for (float v : w.data()) {
    EXPECT_LE(std::abs(v), limit);
  }
  EXPECT_EQ(w, glorot_uniform<float>({10, 6}, 10, 6, b));
}

}  // namespace
}  // namespace relfuse
