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

#include "relfuse/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace relfuse {

namespace {

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

void require_ready(bool ready, const char* layer) {
  if (!ready) {
    throw CacheError(std::string(layer) +
                     " backward: cache is empty or was already consumed by an earlier backward");
  }
}

void require_upstream(const Shape& expected, const Shape& got, const char* layer) {
  if (expected != got) {
    throw CacheError(std::string(layer) + " backward: upstream gradient " + shape_to_string(got) +
                     " does not match cached output " + shape_to_string(expected));
  }
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + " must be a matrix, got " + shape_to_string(t.shape()));
  }
}

}  // namespace

// --- dense -----------------------------------------------------------------

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                        Activation activation, DenseCache<T>* cache) {
  require_rank2(x, "dense input");
  require_rank2(weight, "dense weight");
  if (x.cols() != weight.rows() || bias.rank() != 1 || bias.dim(0) != weight.cols()) {
    throw ShapeError("dense: input " + shape_to_string(x.shape()) + ", weight " +
                     shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()) +
                     " do not agree");
  }
  Tensor<T> y = add_row_vector(matmul(x, weight), bias);
  if (activation == Activation::kRelu) {
    for (auto& v : y.data()) v = std::max(v, T{0});
  }
  if (cache) {
    cache->input = x;
    cache->output = y;
    cache->activation = activation;
    cache->ready = true;
  }
  return y;
}

template <typename T>
DenseGrads<T> dense_backward(DenseCache<T>& cache, const Tensor<T>& weight,
                             const Tensor<T>& upstream) {
  require_ready(cache.ready, "dense");
  require_upstream(cache.output.shape(), upstream.shape(), "dense");
  if (weight.rows() != cache.input.cols() || weight.cols() != cache.output.cols()) {
    throw CacheError("dense backward: weight " + shape_to_string(weight.shape()) +
                     " does not match the cached forward");
  }
  cache.ready = false;

  Tensor<T> dpre = upstream;
  if (cache.activation == Activation::kRelu) {
    for (std::size_t i = 0; i < dpre.size(); ++i)
      if (cache.output[i] <= T{0}) dpre[i] = T{0};
  }
  DenseGrads<T> g;
  g.weight = matmul_tn(cache.input, dpre);
  g.bias = reduce_sum(dpre, 0);
  g.input = matmul_nt(dpre, weight);
  return g;
}

// --- conv1d ----------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                         Conv1dCache<T>* cache) {
  require_rank2(x, "conv1d input");
  if (kernel.rank() != 3) {
    throw ShapeError("conv1d kernel must be k x Cin x Cout, got " + shape_to_string(kernel.shape()));
  }
  const std::size_t k = kernel.dim(0), cin = kernel.dim(1), cout = kernel.dim(2);
  if (k % 2 == 0) throw ShapeError("conv1d kernel size must be odd, got " + std::to_string(k));
  if (x.cols() != cin) {
    throw ShapeError("conv1d: input " + shape_to_string(x.shape()) + " has " +
                     std::to_string(x.cols()) + " channels, kernel expects " + std::to_string(cin));
  }
  if (bias.rank() != 1 || bias.dim(0) != cout) {
    throw ShapeError("conv1d: bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(cout) + " filters");
  }
  const std::size_t len = x.rows();
  if (len < k) {
    throw ShapeError("conv1d: sequence shorter than kernel (" + std::to_string(len) + " < " +
                     std::to_string(k) + ")");
  }
  const std::size_t out_len = len - k + 1;
  // Row t of the column matrix is the contiguous window x[t .. t+k-1].
  Tensor<T> columns({out_len, k * cin});
  for (std::size_t t = 0; t < out_len; ++t) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(t * cin), k * cin,
                columns.data().begin() + static_cast<std::ptrdiff_t>(t * k * cin));
  }
  const Tensor<T> w = reshape(kernel, {k * cin, cout});
  Tensor<T> y = add_row_vector(matmul(columns, w), bias);
  if (cache) {
    cache->columns = std::move(columns);
    cache->input_shape = x.shape();
    cache->kernel_size = k;
    cache->ready = true;
  }
  return y;
}

template <typename T>
Conv1dGrads<T> conv1d_backward(Conv1dCache<T>& cache, const Tensor<T>& kernel,
                               const Tensor<T>& upstream) {
  require_ready(cache.ready, "conv1d");
  const std::size_t k = cache.kernel_size;
  const std::size_t cin = cache.input_shape[1];
  if (kernel.rank() != 3 || kernel.dim(0) != k || kernel.dim(1) != cin) {
    throw CacheError("conv1d backward: kernel " + shape_to_string(kernel.shape()) +
                     " does not match the cached forward");
  }
  const std::size_t cout = kernel.dim(2);
  require_upstream({cache.columns.rows(), cout}, upstream.shape(), "conv1d");
  cache.ready = false;

  const Tensor<T> w = reshape(kernel, {k * cin, cout});
  Conv1dGrads<T> g;
  g.kernel = reshape(matmul_tn(cache.columns, upstream), {k, cin, cout});
  g.bias = reduce_sum(upstream, 0);
  const Tensor<T> dcolumns = matmul_nt(upstream, w);
  g.input = Tensor<T>(cache.input_shape);
  const std::size_t window = k * cin;
  for (std::size_t t = 0; t < dcolumns.rows(); ++t) {
    for (std::size_t e = 0; e < window; ++e) g.input[t * cin + e] += dcolumns[t * window + e];
  }
  return g;
}

// --- maxpool1d -------------------------------------------------------------

template <typename T>
MaxPoolResult<T> maxpool1d_forward(const Tensor<T>& x, std::size_t pool, MaxPoolCache<T>* cache) {
  if (pool < 1) throw ShapeError("maxpool1d: pool size must be >= 1");
  require_rank2(x, "maxpool1d input");
  const std::size_t out_len = x.rows() / pool;
  if (out_len == 0) {
    throw ShapeError("maxpool1d: " + std::to_string(x.rows()) + " rows cannot fill a window of " +
                     std::to_string(pool));
  }
  const std::size_t c = x.cols();
  MaxPoolResult<T> r{Tensor<T>({out_len, c}), std::vector<std::size_t>(out_len * c)};
  for (std::size_t o = 0; o < out_len; ++o) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = (o * pool) * c + ch;
      for (std::size_t p = 1; p < pool; ++p) {
        const std::size_t idx = (o * pool + p) * c + ch;
        if (x[idx] > x[best]) best = idx;  // strict: ties keep the lower index
      }
      r.output[o * c + ch] = x[best];
      r.argmax[o * c + ch] = best;
    }
  }
  if (cache) {
    cache->input_shape = x.shape();
    cache->output_shape = r.output.shape();
    cache->argmax = r.argmax;
    cache->ready = true;
  }
  return r;
}

template <typename T>
Tensor<T> maxpool1d_backward(MaxPoolCache<T>& cache, const Tensor<T>& upstream) {
  require_ready(cache.ready, "maxpool1d");
  require_upstream(cache.output_shape, upstream.shape(), "maxpool1d");
  cache.ready = false;
  Tensor<T> dx(cache.input_shape);
  for (std::size_t i = 0; i < upstream.size(); ++i) dx[cache.argmax[i]] += upstream[i];
  return dx;
}

// --- batchnorm + relu ------------------------------------------------------

template <typename T>
BatchNormResult<T> batchnorm_relu_forward(const Tensor<T>& x, const BatchNormParams<T>& params,
                                          Phase phase, const BatchNormOptions& options,
                                          BatchNormCache<T>* cache) {
  require_rank2(x, "batchnorm input");
  const std::size_t n = x.rows(), c = x.cols();
  for (const Tensor<T>* p : {&params.gamma, &params.beta, &params.running_mean, &params.running_var}) {
    if (p->rank() != 1 || p->dim(0) != c) {
      throw ShapeError("batchnorm: parameter " + shape_to_string(p->shape()) +
                       " does not match input " + shape_to_string(x.shape()));
    }
  }
  const T eps = static_cast<T>(options.epsilon);
  Tensor<T> mean({c}), var({c});
  BatchNormResult<T> r;
  if (phase == Phase::kTrain) {
    if (n < 2) throw ShapeError("batchnorm: train mode needs at least 2 rows, got " + std::to_string(n));
    mean = scale(reduce_sum(x, 0), T{1} / static_cast<T>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const T d = x(i, j) - mean[j];
        var[j] += d * d;
      }
    var = scale(var, T{1} / static_cast<T>(n));
    const T m = static_cast<T>(options.momentum);
    RunningStats<T> updated{Tensor<T>({c}), Tensor<T>({c})};
    for (std::size_t j = 0; j < c; ++j) {
      updated.mean[j] = m * params.running_mean[j] + (T{1} - m) * mean[j];
      updated.var[j] = m * params.running_var[j] + (T{1} - m) * var[j];
    }
    r.updated = std::move(updated);
  } else {
    mean = params.running_mean;
    var = params.running_var;
  }

  Tensor<T> inv_std({c});
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = T{1} / std::sqrt(var[j] + eps);
  Tensor<T> normalized({n, c}), pre({n, c});
  r.output = Tensor<T>({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T xh = (x(i, j) - mean[j]) * inv_std[j];
      normalized(i, j) = xh;
      const T y = params.gamma[j] * xh + params.beta[j];
      pre(i, j) = y;
      r.output(i, j) = std::max(y, T{0});
    }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->pre_activation = std::move(pre);
    cache->train = phase == Phase::kTrain;
    cache->ready = true;
  }
  return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_relu_backward(BatchNormCache<T>& cache,
                                          const BatchNormParams<T>& params,
                                          const Tensor<T>& upstream) {
  require_ready(cache.ready, "batchnorm");
  require_upstream(cache.pre_activation.shape(), upstream.shape(), "batchnorm");
  const std::size_t n = upstream.rows(), c = upstream.cols();
  if (params.gamma.size() != c) throw CacheError("batchnorm backward: gamma does not match cache");
  cache.ready = false;

  Tensor<T> dy = upstream;
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (cache.pre_activation[i] <= T{0}) dy[i] = T{0};

  BatchNormGrads<T> g{Tensor<T>({n, c}), Tensor<T>({c}), Tensor<T>({c})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      g.gamma[j] += dy(i, j) * cache.normalized(i, j);
      g.beta[j] += dy(i, j);
    }
  if (!cache.train) {
    // Running statistics are constants: the layer is a per-column affine map.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) g.input(i, j) = dy(i, j) * params.gamma[j] * cache.inv_std[j];
    return g;
  }
  // dx = inv_std / N * (N dxh - sum(dxh) - xh * sum(dxh * xh)), dxh = dy * gamma
  const T nn = static_cast<T>(n);
  for (std::size_t j = 0; j < c; ++j) {
    const T sum_dxh = g.beta[j] * params.gamma[j];
    const T sum_dxh_xh = g.gamma[j] * params.gamma[j];
    for (std::size_t i = 0; i < n; ++i) {
      const T dxh = dy(i, j) * params.gamma[j];
      g.input(i, j) =
          cache.inv_std[j] / nn * (nn * dxh - sum_dxh - cache.normalized(i, j) * sum_dxh_xh);
    }
  }
  return g;
}

// --- dropout ---------------------------------------------------------------

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, Rng& rng, Phase phase,
                          DropoutCache<T>* cache) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor<T> mask = Tensor<T>::full(x.shape(), T{1});
  if (phase == Phase::kTrain && rate > 0.0) {
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask.data()) m = rng.uniform() < rate ? T{0} : keep_scale;
  }
  Tensor<T> y = phase == Phase::kTrain && rate > 0.0 ? hadamard(x, mask) : x;
  if (cache) {
    cache->mask = std::move(mask);
    cache->ready = true;
  }
  return y;
}

template <typename T>
Tensor<T> dropout_backward(DropoutCache<T>& cache, const Tensor<T>& upstream) {
  require_ready(cache.ready, "dropout");
  require_upstream(cache.mask.shape(), upstream.shape(), "dropout");
  cache.ready = false;
  return hadamard(upstream, cache.mask);
}

// --- lstm ------------------------------------------------------------------

template <typename T>
Tensor<T> lstm_forward(const Tensor<T>& seq, const LstmParams<T>& params, LstmCache<T>* cache) {
  require_rank2(seq, "lstm input");
  const std::size_t steps = seq.rows(), din = seq.cols();
  if (params.kernel.rank() != 2 || params.kernel.rows() != din || params.kernel.cols() % 4 != 0) {
    throw ShapeError("lstm: kernel " + shape_to_string(params.kernel.shape()) +
                     " does not match input " + shape_to_string(seq.shape()));
  }
  const std::size_t h = params.kernel.cols() / 4;
  if (params.recurrent_kernel.shape() != Shape{h, 4 * h} || params.bias.shape() != Shape{4 * h}) {
    throw ShapeError("lstm: recurrent kernel " + shape_to_string(params.recurrent_kernel.shape()) +
                     " or bias " + shape_to_string(params.bias.shape()) + " inconsistent with " +
                     std::to_string(h) + " hidden units");
  }

  const Tensor<T> projected = add_row_vector(matmul(seq, params.kernel), params.bias);
  Tensor<T> gates({steps, 4 * h}), cells({steps, h}), hiddens({steps, h});
  Tensor<T> h_prev({1, h}), c_prev({1, h});
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor<T> rec = matmul(h_prev, params.recurrent_kernel);
    for (std::size_t u = 0; u < h; ++u) {
      const T zi = projected(t, u) + rec[u];
      const T zf = projected(t, h + u) + rec[h + u];
      const T zg = projected(t, 2 * h + u) + rec[2 * h + u];
      const T zo = projected(t, 3 * h + u) + rec[3 * h + u];
      const T i = sigmoid(zi), f = sigmoid(zf), g = std::tanh(zg), o = sigmoid(zo);
      const T c = f * c_prev[u] + i * g;
      gates(t, u) = i;
      gates(t, h + u) = f;
      gates(t, 2 * h + u) = g;
      gates(t, 3 * h + u) = o;
      cells(t, u) = c;
      hiddens(t, u) = o * std::tanh(c);
    }
    h_prev = slice_rows(hiddens, t, 1);
    c_prev = slice_rows(cells, t, 1);
  }
  if (cache) {
    cache->input = seq;
    cache->gates = std::move(gates);
    cache->cells = std::move(cells);
    cache->hiddens = hiddens;
    cache->ready = true;
  }
  return hiddens;
}

template <typename T>
LstmGrads<T> lstm_backward(LstmCache<T>& cache, const LstmParams<T>& params,
                           const Tensor<T>& upstream) {
  require_ready(cache.ready, "lstm");
  require_upstream(cache.hiddens.shape(), upstream.shape(), "lstm");
  const std::size_t steps = cache.hiddens.rows(), h = cache.hiddens.cols();
  if (params.kernel.cols() != 4 * h || params.kernel.rows() != cache.input.cols()) {
    throw CacheError("lstm backward: params do not match the cached forward");
  }
  cache.ready = false;

  Tensor<T> dz({steps, 4 * h});
  Tensor<T> dh_next({1, h}), dc_next({1, h});
  for (std::size_t s = steps; s-- > 0;) {
    Tensor<T> dz_row({1, 4 * h});
    for (std::size_t u = 0; u < h; ++u) {
      const T i = cache.gates(s, u), f = cache.gates(s, h + u);
      const T g = cache.gates(s, 2 * h + u), o = cache.gates(s, 3 * h + u);
      const T c = cache.cells(s, u);
      const T c_prev = s > 0 ? cache.cells(s - 1, u) : T{0};
      const T tc = std::tanh(c);
      const T dh = upstream(s, u) + dh_next[u];
      const T dc = dh * o * (T{1} - tc * tc) + dc_next[u];
      dz_row[u] = dc * g * i * (T{1} - i);
      dz_row[h + u] = dc * c_prev * f * (T{1} - f);
      dz_row[2 * h + u] = dc * i * (T{1} - g * g);
      dz_row[3 * h + u] = dh * tc * o * (T{1} - o);
      dc_next[u] = dc * f;
    }
    dh_next = matmul_nt(dz_row, params.recurrent_kernel);
    std::copy(dz_row.data().begin(), dz_row.data().end(),
              dz.data().begin() + static_cast<std::ptrdiff_t>(s * 4 * h));
  }

  LstmGrads<T> g;
  g.kernel = matmul_tn(cache.input, dz);
  g.bias = reduce_sum(dz, 0);
  g.input = matmul_nt(dz, params.kernel);
  g.recurrent_kernel = Tensor<T>({h, 4 * h});
  for (std::size_t s = 1; s < steps; ++s) {
    // h_{s-1}^T dz_s
    for (std::size_t a = 0; a < h; ++a) {
      const T hv = cache.hiddens(s - 1, a);
      for (std::size_t b = 0; b < 4 * h; ++b) g.recurrent_kernel(a, b) += hv * dz(s, b);
    }
  }
  return g;
}

// --- softmax cross-entropy -------------------------------------------------

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank2(logits, "softmax logits");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  require_finite(logits, "softmax logits");
  SoftmaxXent<T> r{T{0}, Tensor<T>({n, k})};
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ShapeError("softmax_xent: label " + std::to_string(label) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
    T mx = logits(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(i, j));
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) {
      const T e = std::exp(logits(i, j) - mx);
      r.probs(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j) r.probs(i, j) /= denom;
    total += -(logits(i, static_cast<std::size_t>(label)) - mx - std::log(denom));
  }
  r.loss = total / static_cast<T>(n);
  return r;
}

template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probs, std::span<const int> labels) {
  require_rank2(probs, "softmax probs");
  const std::size_t n = probs.rows();
  if (labels.size() != n) throw ShapeError("softmax_xent_backward: label count mismatch");
  Tensor<T> d = probs;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= probs.cols()) {
      throw ShapeError("softmax_xent_backward: label out of range at row " + std::to_string(i));
    }
    d(i, static_cast<std::size_t>(label)) -= T{1};
  }
  return scale(d, T{1} / static_cast<T>(n));
}

// --- init ------------------------------------------------------------------

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

#define RELFUSE_INSTANTIATE(T)                                                                  \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                   Activation, DenseCache<T>*);                                 \
  template DenseGrads<T> dense_backward(DenseCache<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> conv1d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                    Conv1dCache<T>*);                                           \
  template Conv1dGrads<T> conv1d_backward(Conv1dCache<T>&, const Tensor<T>&, const Tensor<T>&); \
  template MaxPoolResult<T> maxpool1d_forward(const Tensor<T>&, std::size_t, MaxPoolCache<T>*); \
  template Tensor<T> maxpool1d_backward(MaxPoolCache<T>&, const Tensor<T>&);                    \
  template BatchNormResult<T> batchnorm_relu_forward(const Tensor<T>&,                          \
                                                     const BatchNormParams<T>&, Phase,          \
                                                     const BatchNormOptions&,                   \
                                                     BatchNormCache<T>*);                       \
  template BatchNormGrads<T> batchnorm_relu_backward(BatchNormCache<T>&,                        \
                                                     const BatchNormParams<T>&,                 \
                                                     const Tensor<T>&);                         \
  template Tensor<T> dropout_forward(const Tensor<T>&, double, Rng&, Phase, DropoutCache<T>*);  \
  template Tensor<T> dropout_backward(DropoutCache<T>&, const Tensor<T>&);                      \
  template Tensor<T> lstm_forward(const Tensor<T>&, const LstmParams<T>&, LstmCache<T>*);       \
  template LstmGrads<T> lstm_backward(LstmCache<T>&, const LstmParams<T>&, const Tensor<T>&);   \
  template SoftmaxXent<T> softmax_xent(const Tensor<T>&, std::span<const int>);                 \
  template Tensor<T> softmax_xent_backward(const Tensor<T>&, std::span<const int>);             \
  template Tensor<T> glorot_uniform(Shape, std::size_t, std::size_t, Rng&);

RELFUSE_INSTANTIATE(float)
RELFUSE_INSTANTIATE(double)

#undef RELFUSE_INSTANTIATE

}  // namespace relfuse
