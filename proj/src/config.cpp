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

#include "relfuse/config.hpp"

#include <set>

#include "relfuse/errors.hpp"

namespace relfuse {

using nlohmann::json;

std::string_view to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::kTwoStream: return "two_stream";
    case StreamMode::kStream1Only: return "stream1_only";
    case StreamMode::kStream2Only: return "stream2_only";
  }
  return "unknown";
}

StreamMode parse_stream_mode(std::string_view name) {
  if (name == "two_stream") return StreamMode::kTwoStream;
  if (name == "stream1_only") return StreamMode::kStream1Only;
  if (name == "stream2_only") return StreamMode::kStream2Only;
  throw ConfigError("unknown stream mode '" + std::string(name) +
                    "' (expected two_stream, stream1_only or stream2_only)");
}

std::string_view to_string(GammaSequence seq) {
  return seq == GammaSequence::kSingleStep ? "single_step" : "scalar_steps";
}

GammaSequence parse_gamma_sequence(std::string_view name) {
  if (name == "single_step") return GammaSequence::kSingleStep;
  if (name == "scalar_steps") return GammaSequence::kScalarSteps;
  throw ConfigError("unknown gamma_sequence '" + std::string(name) + "'");
}

std::string to_string(const StreamShape& s) {
  return "(" + std::to_string(s.length) + "," + std::to_string(s.depth) + ")";
}

std::size_t ModelConfig::encoded_length(const StreamShape& s) const {
  if (s.length < conv_kernel || pool == 0) return 0;
  return (s.length - conv_kernel + 1) / pool;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (fc_dims.empty()) fail("fc_dims must not be empty");
  if (fc_dims.back() != num_classes) {
    fail("last fc_dims entry (" + std::to_string(fc_dims.back()) + ") must equal num_classes (" +
         std::to_string(num_classes) + ")");
  }
  for (std::size_t d : fc_dims)
    if (d == 0) fail("fc_dims entries must be positive");
  for (std::size_t d : fg_hidden)
    if (d == 0) fail("fg_hidden entries must be positive");
  for (std::size_t d : fh_hidden)
    if (d == 0) fail("fh_hidden entries must be positive");
  if (conv_filters == 0 || fg_out == 0 || relation_dim == 0 || lstm_hidden == 0) {
    fail("conv_filters, fg_out, relation_dim and lstm_hidden must be positive");
  }
  if (conv_kernel == 0 || conv_kernel % 2 == 0) fail("conv_kernel must be odd");
  if (pool == 0) fail("pool must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(bn_epsilon > 0.0)) fail("bn_epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must lie in [0, 1]");
  if (pair_block_rows == 0) fail("pair_block_rows must be positive");
  for (const auto* s : {&stream1, &stream2}) {
    if (s->length == 0 || s->depth == 0) fail("stream shapes must be positive");
    if (encoded_length(*s) == 0) {
      fail("stream " + to_string(*s) + " is too short for kernel " + std::to_string(conv_kernel) +
           " and pool " + std::to_string(pool));
    }
  }
}

void TrainingConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("training config: " + msg); };
  if (batch_size < 2) fail("batch_size must be >= 2 (batch normalization)");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(decay >= 0.0)) fail("decay must be non-negative");
  if (!(rho >= 0.0 && rho < 1.0)) fail("rho must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.stream1 = {6, 4};
  c.stream2 = {6, 4};
  c.conv_filters = 4;
  c.fg_hidden = {8, 8};
  c.fg_out = 8;
  c.fh_hidden = {8};
  c.relation_dim = 8;
  c.lstm_hidden = 8;
  c.fc_dims = {8, 8, 3};
  c.num_classes = 3;
  return c;
}

namespace {

json shape_json(const StreamShape& s) { return json::array({s.length, s.depth}); }

StreamShape shape_from_json(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned()) {
    throw ConfigError(std::string("model config: ") + key + " must be [length, depth]");
  }
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError(std::string("unknown ") + section + " config key '" + key + "'");
    }
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + " config: bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{
      {"mode", std::string(to_string(c.mode))},
      {"stream1", shape_json(c.stream1)},
      {"stream2", shape_json(c.stream2)},
      {"conv_filters", c.conv_filters},
      {"conv_kernel", c.conv_kernel},
      {"pool", c.pool},
      {"dropout", c.dropout},
      {"bn_epsilon", c.bn_epsilon},
      {"bn_momentum", c.bn_momentum},
      {"fg_hidden", c.fg_hidden},
      {"fg_out", c.fg_out},
      {"fh_hidden", c.fh_hidden},
      {"relation_dim", c.relation_dim},
      {"pair_block_rows", c.pair_block_rows},
      {"lstm_hidden", c.lstm_hidden},
      {"gamma_sequence", std::string(to_string(c.gamma_sequence))},
      {"fc_dims", c.fc_dims},
      {"num_classes", c.num_classes},
      {"seed", c.seed},
  };
}

json to_json(const TrainingConfig& c) {
  return json{
      {"epochs", c.epochs},     {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
      {"decay", c.decay},       {"rho", c.rho},               {"epsilon", c.epsilon},
  };
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)}, {"training", to_json(c.training)}};
}

ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> kKeys = {
      "mode",         "stream1",     "stream2",   "conv_filters",    "conv_kernel",
      "pool",         "dropout",     "bn_epsilon", "bn_momentum",    "fg_hidden",
      "fg_out",       "fh_hidden",   "relation_dim", "pair_block_rows", "lstm_hidden",
      "gamma_sequence", "fc_dims",   "num_classes", "seed"};
  reject_unknown(j, kKeys, "model");
  ModelConfig c;
  const char* s = "model";
  if (j.contains("mode")) c.mode = parse_stream_mode(j.at("mode").get<std::string>());
  if (j.contains("stream1")) c.stream1 = shape_from_json(j.at("stream1"), "stream1");
  if (j.contains("stream2")) c.stream2 = shape_from_json(j.at("stream2"), "stream2");
  read(j, "conv_filters", c.conv_filters, s);
  read(j, "conv_kernel", c.conv_kernel, s);
  read(j, "pool", c.pool, s);
  read(j, "dropout", c.dropout, s);
  read(j, "bn_epsilon", c.bn_epsilon, s);
  read(j, "bn_momentum", c.bn_momentum, s);
  read(j, "fg_hidden", c.fg_hidden, s);
  read(j, "fg_out", c.fg_out, s);
  read(j, "fh_hidden", c.fh_hidden, s);
  read(j, "relation_dim", c.relation_dim, s);
  read(j, "pair_block_rows", c.pair_block_rows, s);
  read(j, "lstm_hidden", c.lstm_hidden, s);
  if (j.contains("gamma_sequence")) {
    c.gamma_sequence = parse_gamma_sequence(j.at("gamma_sequence").get<std::string>());
  }
  read(j, "fc_dims", c.fc_dims, s);
  read(j, "num_classes", c.num_classes, s);
  read(j, "seed", c.seed, s);
  return c;
}

TrainingConfig training_config_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"epochs", "batch_size", "learning_rate",
                                              "decay",  "rho",        "epsilon"};
  reject_unknown(j, kKeys, "training");
  TrainingConfig c;
  const char* s = "training";
  read(j, "epochs", c.epochs, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "learning_rate", c.learning_rate, s);
  read(j, "decay", c.decay, s);
  read(j, "rho", c.rho, s);
  read(j, "epsilon", c.epsilon, s);
  return c;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"model", "training"}, "top-level");
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("training")) c.training = training_config_from_json(j.at("training"));
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("override key '" + path + "' must be section.key (model.* or training.*)");
  }
  const std::string section = path.substr(0, dot), key = path.substr(dot + 1);
  if (section != "model" && section != "training") {
    throw ConfigError("unknown config section '" + section + "'");
  }
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  doc[section][key] = std::move(value);
}

}  // namespace relfuse
