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

#ifndef RELFUSE_SYNTHETIC_HPP_
#define RELFUSE_SYNTHETIC_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "relfuse/config.hpp"
#include "relfuse/dataset.hpp"

namespace relfuse {

/// Class-conditional Gaussian corpus whose label is only recoverable from
/// both streams together. Class c gets a code (a, b) with a = c % m and
/// b = c / m, m = ceil(sqrt(k)); stream 1 rows are drawn around a prototype
/// chosen by a alone, stream 2 rows around a prototype chosen by b alone.
struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t per_class = 40;
  StreamShape stream1{8, 8};
  StreamShape stream2{8, 8};
  std::uint64_t seed = 0;
  double signal = 1.0;  // prototype scale
  double noise = 1.0;   // per-element noise standard deviation
};

struct SyntheticCorpus {
  Dataset dataset;
  std::vector<Split> splits;  // parallel to dataset.samples; alternating per class
  /// Nearest-class-mean probe accuracy on the test half, fit on the train half.
  double probe_stream1 = 0;
  double probe_stream2 = 0;
  double probe_combined = 0;
};

/// In-memory generation. Throws ConfigError for unusable specs (k < 3,
/// per_class < 2) and Error if the probe self-check does not show that both
/// streams are needed.
SyntheticCorpus make_synthetic(const SyntheticSpec& spec);

/// Nearest-class-mean accuracy on `test` using means fit on `train`, with
/// features taken from stream 1, stream 2, or both (flattened).
double nearest_mean_probe(const std::vector<const FeatureStreamPair<float>*>& train,
                          const std::vector<const FeatureStreamPair<float>*>& test,
                          std::size_t num_classes, bool use_stream1, bool use_stream2);

struct SyntheticOutput {
  Manifest manifest;
  std::filesystem::path manifest_path;
  SyntheticCorpus corpus;
};

/// Writes FTS1 files under out_dir/features/ and out_dir/manifest.json.
SyntheticOutput generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace relfuse

#endif  // RELFUSE_SYNTHETIC_HPP_
