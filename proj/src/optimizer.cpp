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

#include "relfuse/optimizer.hpp"

#include <cmath>

namespace relfuse {

double rmsprop_learning_rate(const RmsPropOptions& options, std::uint64_t step) {
  return options.learning_rate / (1.0 + options.decay * static_cast<double>(step));
}

void rmsprop_update(TensorF& param, const TensorF& grad, TensorF& mean_square, float lr,
                    const RmsPropOptions& options) {
  if (param.shape() != grad.shape() || param.shape() != mean_square.shape()) {
    throw ShapeError("rmsprop: parameter " + shape_to_string(param.shape()) + ", gradient " +
                     shape_to_string(grad.shape()) + " and accumulator " +
                     shape_to_string(mean_square.shape()) + " differ");
  }
  const float rho = static_cast<float>(options.rho);
  const float eps = static_cast<float>(options.epsilon);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    mean_square[i] = rho * mean_square[i] + (1.0f - rho) * g * g;
    param[i] -= lr * g / (std::sqrt(mean_square[i]) + eps);
  }
}

void rmsprop_step(ModelParams<float>& params, const ModelParams<float>& grads,
                  OptimizerState& state, const RmsPropOptions& options) {
  auto p = named_tensors(params);
  const auto g = named_tensors(grads);
  if (p.size() != g.size()) throw ShapeError("rmsprop: gradient layout does not match parameters");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].name != g[i].name) throw ShapeError("rmsprop: gradient layout does not match parameters");
    if (!p[i].trainable) continue;
    for (std::size_t e = 0; e < g[i].tensor->size(); ++e) {
      if (!std::isfinite((*g[i].tensor)[e])) {
        throw NumericError("rmsprop: non-finite gradient for parameter '" + p[i].name +
                           "' at flat index " + std::to_string(e) + " (step " +
                           std::to_string(state.step) + ")");
      }
    }
  }
  const float lr = static_cast<float>(rmsprop_learning_rate(options, state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i].trainable) continue;
    auto [it, inserted] = state.mean_square.try_emplace(p[i].name, p[i].tensor->shape());
    rmsprop_update(*p[i].tensor, *g[i].tensor, it->second, lr, options);
  }
  ++state.step;
}

}  // namespace relfuse
