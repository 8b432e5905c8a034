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

#ifndef RELFUSE_RELATIONAL_HPP_
#define RELFUSE_RELATIONAL_HPP_

#include <cstddef>
#include <vector>

#include "relfuse/layers.hpp"
#include "relfuse/tensor.hpp"

namespace relfuse {

/// A stack of dense layers with per-layer activations.
template <typename T>
struct Mlp {
  std::vector<DenseParams<T>> layers;
  std::vector<Activation> activations;

  std::size_t in_dim() const { return layers.front().weight.rows(); }
  std::size_t out_dim() const { return layers.back().weight.cols(); }
};

template <typename T>
struct MlpGrads {
  Tensor<T> input;
  std::vector<DenseParams<T>> layers;
};

template <typename T>
Tensor<T> mlp_forward(const Mlp<T>& mlp, const Tensor<T>& x,
                      std::vector<DenseCache<T>>* caches = nullptr);

template <typename T>
MlpGrads<T> mlp_backward(std::vector<DenseCache<T>>& caches, const Mlp<T>& mlp,
                         const Tensor<T>& upstream);

/// All cross-stream pairs: row (i * L2 + j) = [beta1_i ; beta2_j].
template <typename T>
Tensor<T> pair_table(const Tensor<T>& beta1, const Tensor<T>& beta2);

/// Rows [first, first + count) of pair_table(beta1, beta2).
template <typename T>
Tensor<T> pair_table_block(const Tensor<T>& beta1, const Tensor<T>& beta2, std::size_t first,
                           std::size_t count);

struct RelationOptions {
  /// Pair rows materialized at once.
  std::size_t block_rows = 4096;
};

template <typename T>
struct RelationCache {
  Tensor<T> beta1;
  Tensor<T> beta2;
  std::vector<DenseCache<T>> h_caches;
  std::size_t block_rows = 0;
  bool single_stream = false;
  bool ready = false;
};

template <typename T>
struct RelationGrads {
  Tensor<T> beta1;  // in single-stream mode: gradient of the one stream
  Tensor<T> beta2;  // empty in single-stream mode
  std::vector<DenseParams<T>> g;
  std::vector<DenseParams<T>> h;
};

/// gamma = f_h( sum_i sum_j f_g([beta1_i ; beta2_j]) ), summed in ascending
/// pair-row order. Returns a vector of length f_h.out_dim().
template <typename T>
Tensor<T> relation_forward(const Tensor<T>& beta1, const Tensor<T>& beta2, const Mlp<T>& g,
                           const Mlp<T>& h, const RelationOptions& options = {},
                           RelationCache<T>* cache = nullptr);

/// Pairs drawn from one stream, self-pairs included.
template <typename T>
Tensor<T> relation_forward_single(const Tensor<T>& beta, const Mlp<T>& g, const Mlp<T>& h,
                                  const RelationOptions& options = {},
                                  RelationCache<T>* cache = nullptr);

/// f_g is re-evaluated block by block instead of caching every pair
/// activation, which bounds memory at large pair counts.
template <typename T>
RelationGrads<T> relation_backward(RelationCache<T>& cache, const Mlp<T>& g, const Mlp<T>& h,
                                   const Tensor<T>& dgamma);

}  // namespace relfuse

#endif  // RELFUSE_RELATIONAL_HPP_
