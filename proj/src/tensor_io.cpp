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

#include "relfuse/tensor_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>

#include "byte_io.hpp"

namespace relfuse {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatError::Kind::kIo, "error reading '" + path + "'");
  return data;
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw FormatError(FormatError::Kind::kIo, "error writing '" + path + "'");
}

}  // namespace detail

std::size_t tensor_file_size(const Shape& shape) {
  return 8 + 4 * shape.size() + 4 * shape_volume(shape);
}

std::string encode_tensor(const TensorF& tensor) {
  if (tensor.empty()) throw FormatError(FormatError::Kind::kCorrupt, "cannot encode an empty tensor");
  if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
    throw FormatError(FormatError::Kind::kDimOverflow, "rank exceeds 255");
  }
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    if (!std::isfinite(tensor[i])) {
      throw FormatError(FormatError::Kind::kNonFinite,
                        "refusing to write non-finite value at flat index " + std::to_string(i));
    }
  }
  detail::ByteWriter w;
  w.bytes(kTensorMagic);
  w.u8(static_cast<std::uint8_t>(tensor.rank()));
  w.u8(0);
  w.u8(0);
  w.u8(0);
  for (std::size_t d : tensor.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError(FormatError::Kind::kDimOverflow, "dimension exceeds u32");
    }
    w.u32(static_cast<std::uint32_t>(d));
  }
  for (float v : tensor.data()) w.f32(v);
  return w.take();
}

TensorF decode_tensor(std::string_view bytes, const std::string& context) {
  using Kind = FormatError::Kind;
  detail::ByteReader r(bytes, context);
  if (r.remaining() < 4 || r.bytes(4, "magic") != kTensorMagic) {
    throw FormatError(Kind::kBadMagic, context + ": bad magic (expected \"FTS1\")");
  }
  const std::uint8_t rank = r.u8("rank");
  if (rank == 0) r.fail(Kind::kCorrupt, "rank must be at least 1");
  for (int i = 0; i < 3; ++i) {
    if (r.u8("reserved") != 0) r.fail(Kind::kCorrupt, "reserved header bytes must be zero");
  }
  Shape shape(rank);
  std::uint64_t volume = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32("dims");
    if (d == 0) r.fail(Kind::kCorrupt, "dimension " + std::to_string(i) + " is zero");
    // Keep volume * 4 representable and bounded by the bytes actually present.
    if (volume > (std::numeric_limits<std::uint64_t>::max() / 4) / d) {
      r.fail(Kind::kDimOverflow, "dimension product overflows");
    }
    volume *= d;
    shape[i] = d;
  }
  if (volume * 4 > r.remaining()) {
    r.fail(Kind::kTruncated, "payload truncated: dims " + shape_to_string(shape) + " need " +
                                 std::to_string(volume * 4) + " bytes, " +
                                 std::to_string(r.remaining()) + " present");
  }
  std::vector<float> data(static_cast<std::size_t>(volume));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = r.f32("payload");
    if (!std::isfinite(data[i])) {
      r.fail(Kind::kNonFinite, "non-finite payload value at flat index " + std::to_string(i));
    }
  }
  if (!r.at_end()) {
    r.fail(Kind::kCorrupt, std::to_string(r.remaining()) + " trailing bytes after payload");
  }
  return TensorF(std::move(shape), std::move(data));
}

void write_tensor(const std::string& path, const TensorF& tensor) {
  detail::write_file(path, encode_tensor(tensor));
}

TensorF read_tensor(const std::string& path) {
  return decode_tensor(detail::read_file(path), path);
}

Shape read_tensor_shape(const std::string& path) {
  using Kind = FormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::kIo, "cannot open '" + path + "' for reading");
  std::string head(8, '\0');
  in.read(head.data(), 8);
  head.resize(static_cast<std::size_t>(in.gcount()));
  if (head.size() < 4 || std::string_view(head).substr(0, 4) != kTensorMagic) {
    throw FormatError(Kind::kBadMagic, path + ": bad magic (expected \"FTS1\")");
  }
  if (head.size() < 8) throw FormatError(Kind::kTruncated, path + ": truncated header");
  const std::size_t rank = static_cast<std::uint8_t>(head[4]);
  std::string dims(4 * rank, '\0');
  in.read(dims.data(), static_cast<std::streamsize>(dims.size()));
  dims.resize(static_cast<std::size_t>(in.gcount()));
  detail::ByteReader r(dims, path);
  Shape shape(rank);
  for (auto& d : shape) {
    d = r.u32("dims");
    if (d == 0) throw FormatError(Kind::kCorrupt, path + ": zero dimension");
  }
  return shape;
}

}  // namespace relfuse
