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
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "relfuse/errors.hpp"
#include "relfuse/gradcheck.hpp"
#include "relfuse/model.hpp"

namespace relfuse {
namespace {

template <typename T>
std::vector<FeatureStreamPair<T>> random_batch(const ModelConfig& c, std::size_t n,
                                               std::mt19937_64& gen) {
  std::vector<FeatureStreamPair<T>> batch(n);
  for (std::size_t i = 0; i < n; ++i) {
    batch[i].stream1 = oracle::random_tensor<T>({c.stream1.length, c.stream1.depth}, gen);
    batch[i].stream2 = oracle::random_tensor<T>({c.stream2.length, c.stream2.depth}, gen);
    batch[i].label = static_cast<int>(i % c.num_classes);
    batch[i].id = "s" + std::to_string(i);
  }
  return batch;
}

template <typename T>
ForwardResult<T> run(const ModelConfig& c, const ModelParams<T>& p,
                     const std::vector<FeatureStreamPair<T>>& batch, Phase phase,
                     std::uint64_t seed = 0) {
  Rng rng(seed);
  return forward<T>(c, p, std::span<const FeatureStreamPair<T>>(batch), phase, rng);
}

TEST(Model, DefaultConfigShapePropagation) {
  ModelConfig c;  // (196,1024) and (196,256), 32 filters, k = 8
  EXPECT_EQ(c.encoded_length(c.stream1), 97u);
  EXPECT_EQ(c.encoded_length(c.stream2), 97u);
  const auto p = init_params<float>(c);
  std::mt19937_64 gen(1);
  const auto batch = random_batch<float>(c, 2, gen);
  auto r = run(c, p, batch, Phase::kTrain);
  ASSERT_EQ(r.cache.relation.size(), 2u);
  EXPECT_EQ(r.cache.relation[0].beta1.shape(), (Shape{97, 32}));
  EXPECT_EQ(r.cache.relation[0].beta2.shape(), (Shape{97, 32}));
  EXPECT_EQ(r.cache.relation[0].beta1.rows() * r.cache.relation[0].beta2.rows(), 9409u);
  EXPECT_EQ(r.cache.lstm[0].input.shape(), (Shape{1, 64}));  // gamma as one timestep
  EXPECT_EQ(r.logits.shape(), (Shape{2, 8}));
  EXPECT_EQ(r.predictions[0].embedding.shape(), (Shape{300}));
}

TEST(Model, UniformLogitInitGivesLnK) {
  ModelConfig c = tiny_model_config();
  c.num_classes = 8;
  c.fc_dims = {8, 8, 8};
  auto p = init_params<float>(c);
  p.head.layers.back().weight = TensorF::zeros(p.head.layers.back().weight.shape());
  p.head.layers.back().bias = TensorF::zeros(p.head.layers.back().bias.shape());
  std::mt19937_64 gen(2);
  const auto batch = random_batch<float>(c, 8, gen);
  const auto r = run(c, p, batch, Phase::kTrain);
  EXPECT_NEAR(r.loss, std::log(8.0), 1e-6);
}

TEST(Model, Stream1OnlyNeverReadsStream2) {
  ModelConfig c = tiny_model_config();
  c.mode = StreamMode::kStream1Only;
  const auto p = init_params<float>(c);
  EXPECT_FALSE(p.encoder2.has_value());
  std::mt19937_64 gen(3);
  auto batch = random_batch<float>(c, 3, gen);
  const auto a = run(c, p, batch, Phase::kTrain, 7);
  for (auto& s : batch) s.stream2 = oracle::random_tensor<float>({9, 9}, gen);
  const auto b = run(c, p, batch, Phase::kTrain, 7);
  EXPECT_EQ(a.logits, b.logits);
  for (auto& s : batch) s.stream2 = TensorF();
  EXPECT_EQ(run(c, p, batch, Phase::kInfer).logits, run(c, p, batch, Phase::kInfer).logits);
}

TEST(Model, ParameterNamesAreStableAndUnique) {
  const auto p = init_params<float>(tiny_model_config());
  std::set<std::string> names;
  for (const auto& nt : named_tensors(p)) EXPECT_TRUE(names.insert(nt.name).second) << nt.name;
  for (const char* n : {"encoder1.conv.kernel", "encoder2.bn.running_var", "relation.g.0.weight",
                        "relation.h.1.bias", "lstm.recurrent_kernel", "fc1.weight", "fc3.bias"})
    EXPECT_TRUE(names.count(n)) << n;
  ModelConfig s2 = tiny_model_config();
  s2.mode = StreamMode::kStream2Only;
  for (const auto& nt : named_tensors(init_params<float>(s2)))
    EXPECT_EQ(nt.name.rfind("encoder1.", 0), std::string::npos);
}

TEST(Model, InitFollowsConventions) {
  const ModelConfig c = tiny_model_config();
  const auto p = init_params<float>(c);
  const std::size_t h = c.lstm_hidden;
  for (std::size_t u = 0; u < 4 * h; ++u)
    EXPECT_EQ(p.lstm.bias[u], (u >= h && u < 2 * h) ? 1.0f : 0.0f);
  EXPECT_EQ(p.encoder1->bn.gamma, TensorF::full({c.conv_filters}, 1.0f));
  EXPECT_EQ(p.encoder1->bn.running_var, TensorF::full({c.conv_filters}, 1.0f));
  EXPECT_EQ(init_params<float>(c).fg.layers[0].weight, p.fg.layers[0].weight);
  ModelConfig other = c;
  other.seed = 99;
  EXPECT_NE(init_params<float>(other).fg.layers[0].weight, p.fg.layers[0].weight);
}

TEST(Model, CheckParamsDetectsMismatch) {
  const ModelConfig c = tiny_model_config();
  auto p = init_params<float>(c);
  EXPECT_NO_THROW(check_params(c, p));
  p.lstm.kernel = TensorF::zeros({3, 3});
  EXPECT_THROW(check_params(c, p), ShapeError);
}

TEST(Model, ProbabilitiesSumToOneAndArgmax) {
  const ModelConfig c = tiny_model_config();
  const auto p = init_params<float>(c);
  std::mt19937_64 gen(4);
  const auto batch = random_batch<float>(c, 5, gen);
  for (Phase phase : {Phase::kTrain, Phase::kInfer}) {
    const auto r = run(c, p, batch, phase);
    for (const auto& pr : r.predictions) {
      double s = 0;
      for (float v : pr.probs.data()) s += v;
      EXPECT_NEAR(s, 1.0, 1e-6);
      EXPECT_EQ(pr.predicted_class, argmax<float>(pr.probs.data()));
    }
  }
}

TEST(Model, ArgmaxLowestIndexOnTies) {
  const std::vector<float> v{0.2f, 0.4f, 0.4f};
  EXPECT_EQ(argmax<float>(v), 1);
}

TEST(Model, InferenceIsDeterministic) {
  const ModelConfig c = tiny_model_config();
  const auto p = init_params<float>(c);
  std::mt19937_64 gen(5);
  const auto batch = random_batch<float>(c, 4, gen);
  const auto a = run(c, p, batch, Phase::kInfer, 1);
  const auto b = run(c, p, batch, Phase::kInfer, 2);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.predictions[2].embedding, b.predictions[2].embedding);
}

TEST(Model, InputErrors) {
  const ModelConfig c = tiny_model_config();
  const auto p = init_params<float>(c);
  std::mt19937_64 gen(6);
  auto batch = random_batch<float>(c, 2, gen);
  std::vector<FeatureStreamPair<float>> one(batch.begin(), batch.begin() + 1);
  EXPECT_THROW(run(c, p, one, Phase::kTrain), ShapeError);
  EXPECT_NO_THROW(run(c, p, one, Phase::kInfer));
  batch[1].stream1 = TensorF::zeros({c.stream1.length, c.stream1.depth + 1});
  EXPECT_THROW(run(c, p, batch, Phase::kInfer), ShapeError);
}

TEST(Model, BackwardRejectsInferAndConsumedCaches) {
  const ModelConfig c = tiny_model_config();
  const auto p = init_params<float>(c);
  std::mt19937_64 gen(7);
  const auto batch = random_batch<float>(c, 3, gen);
  auto inf = run(c, p, batch, Phase::kInfer);
  EXPECT_THROW(backward_full(inf.cache, c, p), CacheError);
  auto tr = run(c, p, batch, Phase::kTrain);
  backward_full(tr.cache, c, p);
  EXPECT_THROW(backward_full(tr.cache, c, p), CacheError);
}

TEST(Model, DuplicatedSampleGetsIdenticalGradient) {
  ModelConfig c = tiny_model_config();
  c.dropout = 0.0;
  const auto p = init_params<double>(c);
  std::mt19937_64 gen(8);
  auto batch = random_batch<double>(c, 3, gen);
  batch[2] = batch[0];
  auto r = run(c, p, batch, Phase::kTrain);
  const auto g = backward_full(r.cache, c, p);
  EXPECT_LT(max_abs_diff(g.stream1[0], g.stream1[2]), 1e-15);
  EXPECT_LT(max_abs_diff(g.stream2[0], g.stream2[2]), 1e-15);
}

TEST(Model, ZeroLossBatchHasZeroGradient) {
  ModelConfig c = tiny_model_config();
  auto p = init_params<double>(c);
  auto& last = p.head.layers.back();
  last.weight = TensorD::zeros(last.weight.shape());
  last.bias = TensorD::vector({1000, 0, 0});
  std::mt19937_64 gen(9);
  auto batch = random_batch<double>(c, 4, gen);
  for (auto& s : batch) s.label = 0;
  auto r = run(c, p, batch, Phase::kTrain);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  const auto g = backward_full(r.cache, c, p);
  for (const auto& nt : named_tensors(g.params))
    for (double v : nt.tensor->data()) EXPECT_NEAR(v, 0.0, 1e-12) << nt.name;
}

TEST(Model, CommitRunningStats) {
  const ModelConfig c = tiny_model_config();
  auto p = init_params<float>(c);
  std::mt19937_64 gen(10);
  const auto batch = random_batch<float>(c, 4, gen);
  const auto before = p.encoder1->bn.running_mean;
  const auto r = run(c, p, batch, Phase::kTrain);
  EXPECT_EQ(p.encoder1->bn.running_mean, before);
  commit_running_stats(p, r);
  EXPECT_EQ(p.encoder1->bn.running_mean, r.encoder1_stats->mean);
  EXPECT_NE(p.encoder1->bn.running_mean, before);
}

TEST(Model, ScalarStepsSequence) {
  ModelConfig c = tiny_model_config();
  c.gamma_sequence = GammaSequence::kScalarSteps;
  const auto p = init_params<float>(c);
  EXPECT_EQ(p.lstm.kernel.shape(), (Shape{1, 4 * c.lstm_hidden}));
  std::mt19937_64 gen(11);
  const auto batch = random_batch<float>(c, 2, gen);
  auto r = run(c, p, batch, Phase::kTrain);
  EXPECT_EQ(r.cache.lstm[0].input.shape(), (Shape{c.relation_dim, 1}));
}

TEST(Model, EndToEndGradientCheck) {
  GradcheckOptions o;
  o.only = {"model_two_stream", "model_stream1_only", "model_stream2_only", "model_scalar_steps"};
  const auto report = run_gradcheck(o);
  ASSERT_EQ(report.components.size(), 4u);
  for (const auto& c : report.components) {
    EXPECT_TRUE(c.passed()) << c.name << " " << c.max_rel_error << " at " << c.worst;
    EXPECT_LT(c.max_rel_error, 1e-4);
  }
}

TEST(Model, CastParamsRoundTrip) {
  const auto p = init_params<float>(tiny_model_config());
  const auto back = cast_params<float>(cast_params<double>(p));
  const auto a = named_tensors(p), b = named_tensors(back);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].tensor, *b[i].tensor);
}

}  // namespace
}  // namespace relfuse
