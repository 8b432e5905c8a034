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

#ifndef RELFUSE_GRADCHECK_HPP_
#define RELFUSE_GRADCHECK_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace relfuse {

/// Finite-difference verification of every backward pass in f64.
///
/// Each component is driven by a scalar loss L = sum(R * y) with a random
/// projection R (softmax cross-entropy and the end-to-end models use their
/// own loss). For every scalar of every input and parameter tensor the
/// analytic dL/dx is compared with n = (L(x + h) - L(x - h)) / 2h. Per tensor
///
///   err = max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, 1e-8)
///
/// and the worst err over tensors and seeds is the component's score. The
/// strictly elementwise ratio is reported alongside; at h = 1e-5 it is
/// limited by one ulp of L for scalars whose gradient is below ~1e-7.
///
/// A tensor whose analytic gradient is identically zero (the conv bias ahead
/// of a train-mode BatchNorm, or the LSTM recurrent kernel when gamma is a
/// single timestep and h0 = 0) has no scale for a relative error; it is
/// instead required to have |n| below zero_gradient_bound everywhere.
struct GradcheckOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double step = 1e-5;
  double layer_tolerance = 1e-5;
  double model_tolerance = 1e-4;
  double zero_gradient_bound = 1e-9;
  /// Restrict to these component names (empty: all).
  std::vector<std::string> only;
  /// Perturb the analytic gradient of this component; used to confirm the
  /// checker actually fails.
  std::optional<std::string> corrupt;
};

struct ComponentResult {
  std::string name;
  bool end_to_end = false;
  double max_rel_error = 0;
  double tolerance = 0;
  std::string worst;  // "<seed>:<tensor>[<flat index>]"
  double worst_analytic = 0;  // at the worst scalar of the worst tensor
  double worst_numeric = 0;
  double max_elementwise_error = 0;  // |a - n| / max(|a|, |n|, 1e-8) over scalars
  std::size_t checked = 0;  // scalars compared, over all seeds
  /// Tensors with an identically zero analytic gradient, "<seed>:<tensor>".
  std::vector<std::string> zero_gradient;
  double max_zero_numeric = 0;
  double zero_bound = 0;
  bool passed() const { return max_rel_error < tolerance && max_zero_numeric < zero_bound; }
};

struct GradcheckReport {
  std::vector<ComponentResult> components;
  double seconds = 0;
  bool passed() const;
};

/// Names accepted by GradcheckOptions::only and ::corrupt.
std::vector<std::string> gradcheck_components();

GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace relfuse

#endif  // RELFUSE_GRADCHECK_HPP_
