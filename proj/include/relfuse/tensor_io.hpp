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

#ifndef RELFUSE_TENSOR_IO_HPP_
#define RELFUSE_TENSOR_IO_HPP_

#include <cstddef>
#include <string>
#include <string_view>

#include "relfuse/tensor.hpp"

namespace relfuse {

// FTS1 feature-tensor file, all integers little-endian:
//
//   offset  size        field
//   0       4           magic "FTS1"
//   4       1           rank (u8, >= 1)
//   5       3           reserved, must be zero
//   8       4 * rank    dims (u32 each, positive)
//   ...     4 * volume  payload, f32 row-major
//
// A (14,14,1024) tensor therefore occupies 8 + 12 + 200704 * 4 = 802836 bytes.

inline constexpr std::string_view kTensorMagic = "FTS1";

std::size_t tensor_file_size(const Shape& shape);

std::string encode_tensor(const TensorF& tensor);

/// Throws FormatError (kBadMagic, kTruncated, kDimOverflow, kNonFinite,
/// kCorrupt) naming the offending byte offset.
TensorF decode_tensor(std::string_view bytes, const std::string& context = "tensor");

void write_tensor(const std::string& path, const TensorF& tensor);
TensorF read_tensor(const std::string& path);

/// Parses only the header; used for cheap manifest validation.
Shape read_tensor_shape(const std::string& path);

}  // namespace relfuse

#endif  // RELFUSE_TENSOR_IO_HPP_
