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

#ifndef RELFUSE_CHECKPOINT_HPP_
#define RELFUSE_CHECKPOINT_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "relfuse/config.hpp"
#include "relfuse/model.hpp"
#include "relfuse/optimizer.hpp"

namespace relfuse {

// Checkpoint file, little-endian:
//
//   "RFCK"                      magic
//   u16                         format version
//   u32 + bytes                 canonical JSON: {"model", "training", "state"}
//   repeated until end of file:
//     u16 + bytes               parameter name
//     u8                        rank
//     u32 * rank                dims
//     f32 * volume              values, row-major
//
// Model tensors come first in named_tensors() order, followed by the
// optimizer accumulators as "optimizer.mean_square/<param name>".

inline constexpr std::string_view kCheckpointMagic = "RFCK";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainingConfig training;
  ModelParams<float> params;
  OptimizerState optimizer;
  std::size_t epoch = 0;  // completed epochs
};

std::string encode_checkpoint(const Checkpoint& ckpt);

/// FormatError on corrupt bytes (with offset); ConfigError if the stored
/// tensors do not match the stored config.
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& context = "checkpoint");

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace relfuse

#endif  // RELFUSE_CHECKPOINT_HPP_
