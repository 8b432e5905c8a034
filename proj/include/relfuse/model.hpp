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

#ifndef RELFUSE_MODEL_HPP_
#define RELFUSE_MODEL_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relfuse/config.hpp"
#include "relfuse/layers.hpp"
#include "relfuse/relational.hpp"
#include "relfuse/rng.hpp"
#include "relfuse/tensor.hpp"

namespace relfuse {

/// The two reshaped feature streams of one image plus its label. In a
/// single-stream mode the unused stream may be left empty.
template <typename T>
struct FeatureStreamPair {
  Tensor<T> stream1;  // L1 x D1
  Tensor<T> stream2;  // L2 x D2
  int label = 0;
  std::string id;
};

/// conv1d -> BatchNorm+ReLU -> dropout -> maxpool
template <typename T>
struct EncoderParams {
  Tensor<T> kernel;  // k x D x F
  Tensor<T> bias;    // F
  BatchNormParams<T> bn;
};

template <typename T>
struct ModelParams {
  std::optional<EncoderParams<T>> encoder1;
  std::optional<EncoderParams<T>> encoder2;
  Mlp<T> fg;
  Mlp<T> fh;
  LstmParams<T> lstm;
  Mlp<T> head;  // fully connected layers, ReLU on all but the last
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  bool trainable;
};

template <typename T>
struct ConstNamedTensor {
  std::string name;
  const Tensor<T>* tensor;
  bool trainable;
};

/// Every tensor of the model under its stable name, in a fixed order.
/// BatchNorm running statistics are listed with trainable = false.
template <typename T>
std::vector<NamedTensor<T>> named_tensors(ModelParams<T>& params);
template <typename T>
std::vector<ConstNamedTensor<T>> named_tensors(const ModelParams<T>& params);

/// Glorot-uniform weights, zero biases, forget-gate bias 1, BatchNorm
/// gamma 1 / beta 0 / running mean 0 / running var 1. Seeded by config.seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config);

/// Same layout as `like`, every tensor zero.
template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& like);

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& params);

/// Throws ShapeError if params do not have the layout implied by config.
template <typename T>
void check_params(const ModelConfig& config, const ModelParams<T>& params);

template <typename T>
struct Prediction {
  Tensor<T> probs;      // k
  int predicted_class;  // argmax, lowest index on ties
  Tensor<T> embedding;  // final LSTM hidden state
};

template <typename T>
struct EncoderCache {
  std::vector<Conv1dCache<T>> conv;
  BatchNormCache<T> bn;
  DropoutCache<T> dropout;
  std::vector<MaxPoolCache<T>> pool;
  std::size_t conv_rows = 0;  // per sample
};

template <typename T>
struct ForwardCache {
  Phase phase = Phase::kInfer;
  bool ready = false;
  std::vector<int> labels;
  EncoderCache<T> encoder1;
  EncoderCache<T> encoder2;
  std::vector<RelationCache<T>> relation;
  std::vector<LstmCache<T>> lstm;
  std::vector<DenseCache<T>> head;
  Tensor<T> probs;
};

template <typename T>
struct ForwardResult {
  std::vector<Prediction<T>> predictions;
  Tensor<T> logits;  // N x k
  T loss{0};
  ForwardCache<T> cache;  // populated in train phase only
  std::optional<RunningStats<T>> encoder1_stats;
  std::optional<RunningStats<T>> encoder2_stats;
};

/// Runs the full pipeline on a batch. In train phase the batch needs at least
/// two samples and dropout draws from `rng`; in infer phase `rng` is unused.
template <typename T>
ForwardResult<T> forward(const ModelConfig& config, const ModelParams<T>& params,
                         std::span<const FeatureStreamPair<T>* const> batch, Phase phase,
                         Rng& rng);

template <typename T>
ForwardResult<T> forward(const ModelConfig& config, const ModelParams<T>& params,
                         std::span<const FeatureStreamPair<T>> batch, Phase phase, Rng& rng);

template <typename T>
struct Gradients {
  ModelParams<T> params;  // running statistics entries stay zero
  std::vector<Tensor<T>> stream1;  // d loss / d theta1 per sample (empty if unused)
  std::vector<Tensor<T>> stream2;
};

/// Gradient of the mean cross-entropy of the cached forward. Consumes the
/// cache; throws CacheError for infer-phase or already-consumed caches.
template <typename T>
Gradients<T> backward_full(ForwardCache<T>& cache, const ModelConfig& config,
                           const ModelParams<T>& params);

/// Writes the running statistics produced by a train-phase forward.
template <typename T>
void commit_running_stats(ModelParams<T>& params, const ForwardResult<T>& result);

/// Index of the largest entry, lowest index on ties.
template <typename T>
int argmax(std::span<const T> values);

}  // namespace relfuse

#endif  // RELFUSE_MODEL_HPP_
