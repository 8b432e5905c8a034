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

#include "relfuse/checkpoint.hpp"

#include <cmath>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "byte_io.hpp"

namespace relfuse {

namespace {

constexpr std::string_view kMeanSquarePrefix = "optimizer.mean_square/";

void write_record(detail::ByteWriter& w, const std::string& name, const TensorF& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError(FormatError::Kind::kCorrupt, "parameter name too long: " + name);
  }
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.data()) w.f32(v);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const nlohmann::json header = {
      {"model", to_json(ckpt.model)},
      {"training", to_json(ckpt.training)},
      {"state", {{"epoch", ckpt.epoch}, {"step", ckpt.optimizer.step}}},
  };
  const std::string text = header.dump();
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& nt : named_tensors(ckpt.params)) write_record(w, nt.name, *nt.tensor);
  for (const auto& [name, v] : ckpt.optimizer.mean_square) {
    write_record(w, std::string(kMeanSquarePrefix) + name, v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& context) {
  using Kind = FormatError::Kind;
  detail::ByteReader r(bytes, context);
  if (r.remaining() < 4 || r.bytes(4, "magic") != kCheckpointMagic) {
    throw FormatError(Kind::kBadMagic, context + ": bad magic (expected \"RFCK\")");
  }
  const std::uint16_t version = r.u16("version");
  if (version != kCheckpointVersion) {
    r.fail(Kind::kBadVersion, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t json_len = r.u32("config length");
  const std::string_view text = r.bytes(json_len, "config JSON");
  nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
  if (header.is_discarded() || !header.is_object() || !header.contains("model") ||
      !header.contains("training") || !header.contains("state")) {
    r.fail(Kind::kCorrupt, "config block is not a valid checkpoint header");
  }

  Checkpoint ckpt;
  ckpt.model = model_config_from_json(header.at("model"));
  ckpt.training = training_config_from_json(header.at("training"));
  try {
    ckpt.epoch = header.at("state").at("epoch").get<std::size_t>();
    ckpt.optimizer.step = header.at("state").at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception&) {
    r.fail(Kind::kCorrupt, "checkpoint state block is malformed");
  }

  std::map<std::string, TensorF> records;
  while (!r.at_end()) {
    const std::size_t record_offset = r.offset();
    const std::uint16_t name_len = r.u16("name length");
    std::string name(r.bytes(name_len, "parameter name"));
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0) r.fail(Kind::kCorrupt, "parameter '" + name + "' has rank 0");
    Shape shape(rank);
    std::uint64_t volume = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dims");
      if (d == 0) r.fail(Kind::kCorrupt, "parameter '" + name + "' has a zero dimension");
      if (volume > (std::numeric_limits<std::uint64_t>::max() / 4) / d) {
        r.fail(Kind::kDimOverflow, "parameter '" + name + "' dimension product overflows");
      }
      volume *= d;
      shape[i] = d;
    }
    if (volume * 4 > r.remaining()) {
      r.fail(Kind::kTruncated, "parameter '" + name + "' (record at offset " +
                                   std::to_string(record_offset) + ") is truncated");
    }
    std::vector<float> data(static_cast<std::size_t>(volume));
    for (auto& v : data) {
      v = r.f32("values");
      if (!std::isfinite(v)) r.fail(Kind::kNonFinite, "parameter '" + name + "' holds a non-finite value");
    }
    if (records.contains(name)) r.fail(Kind::kCorrupt, "duplicate parameter '" + name + "'");
    records.emplace(std::move(name), TensorF(std::move(shape), std::move(data)));
  }

  ckpt.params = init_params<float>(ckpt.model);
  for (auto& nt : named_tensors(ckpt.params)) {
    auto it = records.find(nt.name);
    if (it == records.end()) {
      throw ConfigError(context + ": parameter '" + nt.name + "' required by the config is missing");
    }
    if (it->second.shape() != nt.tensor->shape()) {
      throw ConfigError(context + ": parameter '" + nt.name + "' has shape " +
                        shape_to_string(it->second.shape()) + ", config implies " +
                        shape_to_string(nt.tensor->shape()));
    }
    *nt.tensor = std::move(it->second);
    records.erase(it);
  }
  const auto trainable = named_tensors(ckpt.params);
  for (auto& [name, t] : records) {
    if (!name.starts_with(kMeanSquarePrefix)) {
      throw ConfigError(context + ": parameter '" + name + "' is not part of the config");
    }
    const std::string param = name.substr(kMeanSquarePrefix.size());
    bool matched = false;
    for (const auto& nt : trainable) {
      if (nt.name == param && nt.trainable && nt.tensor->shape() == t.shape()) matched = true;
    }
    if (!matched) {
      throw ConfigError(context + ": optimizer accumulator '" + name +
                        "' does not match a trainable parameter");
    }
    ckpt.optimizer.mean_square.emplace(param, std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace relfuse
