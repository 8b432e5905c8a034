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

#ifndef RELFUSE_CONFIG_HPP_
#define RELFUSE_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace relfuse {

enum class StreamMode { kTwoStream, kStream1Only, kStream2Only };

/// How the relation vector is fed to the LSTM decoder.
enum class GammaSequence {
  kSingleStep,   // gamma is one timestep of width G
  kScalarSteps,  // gamma is G timesteps of width 1
};

std::string_view to_string(StreamMode mode);
StreamMode parse_stream_mode(std::string_view name);
std::string_view to_string(GammaSequence seq);
GammaSequence parse_gamma_sequence(std::string_view name);

/// A stream reshaped to (L, D): L spatial positions of D channels.
struct StreamShape {
  std::size_t length = 0;
  std::size_t depth = 0;

  bool operator==(const StreamShape&) const = default;
};

std::string to_string(const StreamShape& s);

struct ModelConfig {
  StreamMode mode = StreamMode::kTwoStream;
  StreamShape stream1{196, 1024};
  StreamShape stream2{196, 256};

  std::size_t conv_filters = 32;
  std::size_t conv_kernel = 3;
  std::size_t pool = 2;
  double dropout = 0.25;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;

  std::vector<std::size_t> fg_hidden{64, 64};
  std::size_t fg_out = 64;
  std::vector<std::size_t> fh_hidden{64};
  std::size_t relation_dim = 64;  // G, width of gamma
  std::size_t pair_block_rows = 4096;

  std::size_t lstm_hidden = 300;
  GammaSequence gamma_sequence = GammaSequence::kSingleStep;

  std::vector<std::size_t> fc_dims{256, 128, 8};
  std::size_t num_classes = 8;

  std::uint64_t seed = 0;

  bool uses_stream1() const { return mode != StreamMode::kStream2Only; }
  bool uses_stream2() const { return mode != StreamMode::kStream1Only; }

  /// Rows of an encoded stream after conv (valid) and pooling.
  std::size_t encoded_length(const StreamShape& s) const;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainingConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double decay = 8e-9;
  double rho = 0.9;
  double epsilon = 1e-7;

  void validate() const;

  bool operator==(const TrainingConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainingConfig training;

  bool operator==(const RunConfig&) const = default;
};

/// Small model used by tests and the gradient checker.
ModelConfig tiny_model_config();

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainingConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Parsers reject unknown keys. Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainingConfig training_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies "section.key=value" to a config JSON document. The value is parsed
/// as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

}  // namespace relfuse

#endif  // RELFUSE_CONFIG_HPP_
