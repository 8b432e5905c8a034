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

#ifndef RELFUSE_LAYERS_HPP_
#define RELFUSE_LAYERS_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "relfuse/rng.hpp"
#include "relfuse/tensor.hpp"

namespace relfuse {

enum class Phase { kTrain, kInfer };
enum class Activation { kNone, kRelu };

// Every layer below is a pair of free functions. Forward optionally fills a
// cache; backward consumes it exactly once and throws CacheError if the cache
// is empty, already consumed, or the upstream gradient does not match it.

// ---------------------------------------------------------------------------
// Dense: y = act(x W + b)

template <typename T>
struct DenseParams {
  Tensor<T> weight;  // Din x Dout
  Tensor<T> bias;    // Dout
};

template <typename T>
struct DenseCache {
  Tensor<T> input;
  Tensor<T> output;
  Activation activation = Activation::kNone;
  bool ready = false;
};

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                        Activation activation, DenseCache<T>* cache = nullptr);

template <typename T>
DenseGrads<T> dense_backward(DenseCache<T>& cache, const Tensor<T>& weight,
                             const Tensor<T>& upstream);

// ---------------------------------------------------------------------------
// Conv1d: valid cross-correlation along the row axis of an L x Cin input
// with a k x Cin x Cout kernel. Output is (L - k + 1) x Cout.

template <typename T>
struct Conv1dCache {
  Tensor<T> columns;  // L' x (k * Cin), row t holds x[t .. t+k-1] flattened
  Shape input_shape;
  std::size_t kernel_size = 0;
  bool ready = false;
};

template <typename T>
struct Conv1dGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                         Conv1dCache<T>* cache = nullptr);

template <typename T>
Conv1dGrads<T> conv1d_backward(Conv1dCache<T>& cache, const Tensor<T>& kernel,
                               const Tensor<T>& upstream);

// ---------------------------------------------------------------------------
// MaxPool1d: non-overlapping windows of `pool` rows; trailing rows that do not
// fill a window are dropped. Ties resolve to the lowest row index.

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
struct MaxPoolCache {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;
  bool ready = false;
};

template <typename T>
MaxPoolResult<T> maxpool1d_forward(const Tensor<T>& x, std::size_t pool,
                                   MaxPoolCache<T>* cache = nullptr);

template <typename T>
Tensor<T> maxpool1d_backward(MaxPoolCache<T>& cache, const Tensor<T>& upstream);

// ---------------------------------------------------------------------------
// BatchNorm followed by ReLU, normalizing each column over the row axis.

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.99;
};

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  /// Train mode only: running statistics after this batch. Callers commit
  /// them explicitly so forward never mutates parameters.
  std::optional<RunningStats<T>> updated;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;      // x_hat
  Tensor<T> inv_std;         // per column
  Tensor<T> pre_activation;  // gamma * x_hat + beta
  bool train = false;
  bool ready = false;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormResult<T> batchnorm_relu_forward(const Tensor<T>& x, const BatchNormParams<T>& params,
                                          Phase phase, const BatchNormOptions& options = {},
                                          BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batchnorm_relu_backward(BatchNormCache<T>& cache,
                                          const BatchNormParams<T>& params,
                                          const Tensor<T>& upstream);

// ---------------------------------------------------------------------------
// Inverted dropout.

template <typename T>
struct DropoutCache {
  Tensor<T> mask;  // 0 or 1/(1-rate)
  bool ready = false;
};

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, Rng& rng, Phase phase,
                          DropoutCache<T>* cache = nullptr);

template <typename T>
Tensor<T> dropout_backward(DropoutCache<T>& cache, const Tensor<T>& upstream);

// ---------------------------------------------------------------------------
// LSTM over a T x Din sequence with h0 = c0 = 0. Gate layout along the 4H
// axis is [input, forget, candidate, output].

template <typename T>
struct LstmParams {
  Tensor<T> kernel;            // Din x 4H
  Tensor<T> recurrent_kernel;  // H x 4H
  Tensor<T> bias;              // 4H
};

template <typename T>
struct LstmCache {
  Tensor<T> input;     // T x Din
  Tensor<T> gates;     // T x 4H, post-nonlinearity
  Tensor<T> cells;     // T x H
  Tensor<T> hiddens;   // T x H
  bool ready = false;
};

template <typename T>
struct LstmGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> recurrent_kernel;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> lstm_forward(const Tensor<T>& seq, const LstmParams<T>& params,
                       LstmCache<T>* cache = nullptr);

template <typename T>
LstmGrads<T> lstm_backward(LstmCache<T>& cache, const LstmParams<T>& params,
                           const Tensor<T>& upstream);

// ---------------------------------------------------------------------------
// Softmax with mean cross-entropy.

template <typename T>
struct SoftmaxXent {
  T loss;
  Tensor<T> probs;
};

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels);

/// (probs - onehot) / N
template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probs, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Initializers.

/// Uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace relfuse

#endif  // RELFUSE_LAYERS_HPP_
