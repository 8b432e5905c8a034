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

#include "relfuse/relational.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace relfuse {

template <typename T>
Tensor<T> mlp_forward(const Mlp<T>& mlp, const Tensor<T>& x, std::vector<DenseCache<T>>* caches) {
  if (mlp.layers.empty() || mlp.layers.size() != mlp.activations.size()) {
    throw ConfigError("mlp: layers and activations must be non-empty and of equal length");
  }
  if (caches) caches->assign(mlp.layers.size(), DenseCache<T>{});
  Tensor<T> y = x;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    y = dense_forward(y, mlp.layers[l].weight, mlp.layers[l].bias, mlp.activations[l],
                      caches ? &(*caches)[l] : nullptr);
  }
  return y;
}

template <typename T>
MlpGrads<T> mlp_backward(std::vector<DenseCache<T>>& caches, const Mlp<T>& mlp,
                         const Tensor<T>& upstream) {
  if (caches.size() != mlp.layers.size()) {
    throw CacheError("mlp backward: cache holds " + std::to_string(caches.size()) +
                     " layers, network has " + std::to_string(mlp.layers.size()));
  }
  MlpGrads<T> g;
  g.layers.resize(mlp.layers.size());
  Tensor<T> d = upstream;
  for (std::size_t l = mlp.layers.size(); l-- > 0;) {
    DenseGrads<T> lg = dense_backward(caches[l], mlp.layers[l].weight, d);
    g.layers[l] = {std::move(lg.weight), std::move(lg.bias)};
    d = std::move(lg.input);
  }
  g.input = std::move(d);
  return g;
}

template <typename T>
Tensor<T> pair_table_block(const Tensor<T>& beta1, const Tensor<T>& beta2, std::size_t first,
                           std::size_t count) {
  if (beta1.rank() != 2 || beta2.rank() != 2 || beta1.cols() != beta2.cols()) {
    throw ShapeError("pair_table: feature widths differ for " + shape_to_string(beta1.shape()) +
                     " and " + shape_to_string(beta2.shape()));
  }
  const std::size_t l2 = beta2.rows(), f = beta1.cols();
  const std::size_t total = beta1.rows() * l2;
  if (count == 0 || first + count > total) {
    throw ShapeError("pair_table: block [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") exceeds " + std::to_string(total) +
                     " pairs");
  }
  Tensor<T> out({count, 2 * f});
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t i = (first + r) / l2, j = (first + r) % l2;
    auto dst = out.data().begin() + static_cast<std::ptrdiff_t>(r * 2 * f);
    std::copy_n(beta1.data().begin() + static_cast<std::ptrdiff_t>(i * f), f, dst);
    std::copy_n(beta2.data().begin() + static_cast<std::ptrdiff_t>(j * f), f,
                dst + static_cast<std::ptrdiff_t>(f));
  }
  return out;
}

template <typename T>
Tensor<T> pair_table(const Tensor<T>& beta1, const Tensor<T>& beta2) {
  if (beta1.rank() != 2 || beta2.rank() != 2) {
    throw ShapeError("pair_table: inputs must be matrices");
  }
  return pair_table_block(beta1, beta2, 0, beta1.rows() * beta2.rows());
}

namespace {

template <typename T>
Tensor<T> relation_impl(const Tensor<T>& beta1, const Tensor<T>& beta2, const Mlp<T>& g,
                        const Mlp<T>& h, const RelationOptions& options, RelationCache<T>* cache,
                        bool single) {
  if (options.block_rows == 0) throw ConfigError("relation: block_rows must be positive");
  if (beta1.rank() != 2 || beta2.rank() != 2 || beta1.cols() != beta2.cols()) {
    throw ShapeError("relation: feature widths differ for " + shape_to_string(beta1.shape()) +
                     " and " + shape_to_string(beta2.shape()));
  }
  if (g.in_dim() != 2 * beta1.cols()) {
    throw ShapeError("relation: f_g expects " + std::to_string(g.in_dim()) +
                     " inputs, pairs have " + std::to_string(2 * beta1.cols()));
  }
  const std::size_t pairs = beta1.rows() * beta2.rows();
  const std::size_t width = g.out_dim();
  // f32 pair sums accumulate in double so row order does not move the result.
  std::vector<double> acc(width, 0.0);
  for (std::size_t first = 0; first < pairs; first += options.block_rows) {
    const std::size_t count = std::min(options.block_rows, pairs - first);
    const Tensor<T> out = mlp_forward(g, pair_table_block(beta1, beta2, first, count));
    // One running accumulator across blocks: identical to a naive double loop.
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t c = 0; c < width; ++c) acc[c] += static_cast<double>(out(r, c));
  }
  Tensor<T> pair_sum({1, width});
  for (std::size_t c = 0; c < width; ++c) pair_sum[c] = static_cast<T>(acc[c]);
  std::vector<DenseCache<T>>* h_caches = cache ? &cache->h_caches : nullptr;
  Tensor<T> gamma = mlp_forward(h, pair_sum, h_caches);
  if (cache) {
    cache->beta1 = beta1;
    cache->beta2 = single ? Tensor<T>() : beta2;
    cache->block_rows = options.block_rows;
    cache->single_stream = single;
    cache->ready = true;
  }
  return reshape(gamma, {gamma.cols()});
}

template <typename T>
void accumulate(std::vector<DenseParams<T>>& into, const std::vector<DenseParams<T>>& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].weight = add(into[l].weight, from[l].weight);
    into[l].bias = add(into[l].bias, from[l].bias);
  }
}

}  // namespace

template <typename T>
Tensor<T> relation_forward(const Tensor<T>& beta1, const Tensor<T>& beta2, const Mlp<T>& g,
                           const Mlp<T>& h, const RelationOptions& options,
                           RelationCache<T>* cache) {
  return relation_impl(beta1, beta2, g, h, options, cache, false);
}

template <typename T>
Tensor<T> relation_forward_single(const Tensor<T>& beta, const Mlp<T>& g, const Mlp<T>& h,
                                  const RelationOptions& options, RelationCache<T>* cache) {
  return relation_impl(beta, beta, g, h, options, cache, true);
}

template <typename T>
RelationGrads<T> relation_backward(RelationCache<T>& cache, const Mlp<T>& g, const Mlp<T>& h,
                                   const Tensor<T>& dgamma) {
  if (!cache.ready) {
    throw CacheError("relation backward: cache is empty or was already consumed");
  }
  if (dgamma.rank() != 1 || dgamma.dim(0) != h.out_dim()) {
    throw CacheError("relation backward: dgamma " + shape_to_string(dgamma.shape()) +
                     " does not match f_h output width " + std::to_string(h.out_dim()));
  }
  cache.ready = false;
  const Tensor<T>& beta1 = cache.beta1;
  const Tensor<T>& beta2 = cache.single_stream ? cache.beta1 : cache.beta2;

  RelationGrads<T> grads;
  MlpGrads<T> hg = mlp_backward(cache.h_caches, h, reshape(dgamma, {1, dgamma.dim(0)}));
  grads.h = std::move(hg.layers);
  const Tensor<T>& dsum = hg.input;  // 1 x width, shared by every pair row

  const std::size_t l2 = beta2.rows(), f = beta1.cols();
  const std::size_t pairs = beta1.rows() * l2;
  const std::size_t width = g.out_dim();
  Tensor<T> dbeta1(beta1.shape()), dbeta2(beta2.shape());
  for (std::size_t first = 0; first < pairs; first += cache.block_rows) {
    const std::size_t count = std::min(cache.block_rows, pairs - first);
    std::vector<DenseCache<T>> g_caches;
    mlp_forward(g, pair_table_block(beta1, beta2, first, count), &g_caches);
    Tensor<T> upstream({count, width});
    for (std::size_t r = 0; r < count; ++r)
      std::copy_n(dsum.data().begin(), width,
                  upstream.data().begin() + static_cast<std::ptrdiff_t>(r * width));
    MlpGrads<T> gg = mlp_backward(g_caches, g, upstream);
    accumulate(grads.g, gg.layers);
    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t i = (first + r) / l2, j = (first + r) % l2;
      for (std::size_t c = 0; c < f; ++c) {
        dbeta1(i, c) += gg.input(r, c);
        dbeta2(j, c) += gg.input(r, f + c);
      }
    }
  }
  if (cache.single_stream) {
    grads.beta1 = add(dbeta1, dbeta2);
  } else {
    grads.beta1 = std::move(dbeta1);
    grads.beta2 = std::move(dbeta2);
  }
  return grads;
}

#define RELFUSE_INSTANTIATE(T)                                                                \
  template Tensor<T> mlp_forward(const Mlp<T>&, const Tensor<T>&, std::vector<DenseCache<T>>*); \
  template MlpGrads<T> mlp_backward(std::vector<DenseCache<T>>&, const Mlp<T>&,               \
                                    const Tensor<T>&);                                        \
  template Tensor<T> pair_table(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> pair_table_block(const Tensor<T>&, const Tensor<T>&, std::size_t,        \
                                      std::size_t);                                           \
  template Tensor<T> relation_forward(const Tensor<T>&, const Tensor<T>&, const Mlp<T>&,      \
                                      const Mlp<T>&, const RelationOptions&,                  \
                                      RelationCache<T>*);                                     \
  template Tensor<T> relation_forward_single(const Tensor<T>&, const Mlp<T>&, const Mlp<T>&,  \
                                             const RelationOptions&, RelationCache<T>*);      \
  template RelationGrads<T> relation_backward(RelationCache<T>&, const Mlp<T>&, const Mlp<T>&, \
                                              const Tensor<T>&);

RELFUSE_INSTANTIATE(float)
RELFUSE_INSTANTIATE(double)

#undef RELFUSE_INSTANTIATE

}  // namespace relfuse
