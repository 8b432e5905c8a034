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

#ifndef RELFUSE_OPTIMIZER_HPP_
#define RELFUSE_OPTIMIZER_HPP_

#include <cstdint>
#include <map>
#include <string>

#include "relfuse/config.hpp"
#include "relfuse/model.hpp"
#include "relfuse/tensor.hpp"

namespace relfuse {

/// RMSProp with time-based learning-rate decay:
///
///   v      <- rho * v + (1 - rho) * g^2
///   lr_t    = lr0 / (1 + decay * t)
///   theta  <- theta - lr_t * g / (sqrt(v) + eps)
///   t      <- t + 1
struct RmsPropOptions {
  double learning_rate = 0.001;
  double decay = 8e-9;
  double rho = 0.9;
  double epsilon = 1e-7;

  static RmsPropOptions from(const TrainingConfig& c) {
    return {c.learning_rate, c.decay, c.rho, c.epsilon};
  }
};

struct OptimizerState {
  std::uint64_t step = 0;
  /// Mean-square accumulators keyed by parameter name; created as zeros on
  /// the first step that touches a parameter.
  std::map<std::string, TensorF> mean_square;

  bool operator==(const OptimizerState&) const = default;
};

double rmsprop_learning_rate(const RmsPropOptions& options, std::uint64_t step);

/// Updates one tensor in place using the given learning rate.
void rmsprop_update(TensorF& param, const TensorF& grad, TensorF& mean_square, float lr,
                    const RmsPropOptions& options);

/// One optimizer step over every trainable parameter. Throws NumericError
/// naming the parameter if any gradient is non-finite; nothing is updated in
/// that case.
void rmsprop_step(ModelParams<float>& params, const ModelParams<float>& grads,
                  OptimizerState& state, const RmsPropOptions& options);

}  // namespace relfuse

#endif  // RELFUSE_OPTIMIZER_HPP_
