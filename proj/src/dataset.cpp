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

#include "relfuse/dataset.hpp"

#include <set>

#include "byte_io.hpp"
#include "relfuse/tensor_io.hpp"

namespace relfuse {

using nlohmann::json;

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw FormatError(FormatError::Kind::kCorrupt,
                    "unknown split '" + std::string(name) + "' (expected train or test)");
}

json to_json(const Manifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    records.push_back({{"id", r.id},
                       {"label", r.label},
                       {"class", r.class_name},
                       {"split", std::string(to_string(r.split))},
                       {"stream1", r.stream1},
                       {"stream2", r.stream2}});
  }
  return {
      {"header",
       {{"format", "relfuse-manifest"},
        {"version", 1},
        {"classes", m.class_names},
        {"streams",
         {{"stream1", {m.stream1.length, m.stream1.depth}},
          {"stream2", {m.stream2.length, m.stream2.depth}}}}}},
      {"records", records},
  };
}

Manifest manifest_from_json(const json& j, std::filesystem::path base_dir) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  try {
    const json& h = j.at("header");
    m.class_names = h.at("classes").get<std::vector<std::string>>();
    const json& s = h.at("streams");
    m.stream1 = {s.at("stream1").at(0).get<std::size_t>(), s.at("stream1").at(1).get<std::size_t>()};
    m.stream2 = {s.at("stream2").at(0).get<std::size_t>(), s.at("stream2").at(1).get<std::size_t>()};
    for (const json& r : j.at("records")) {
      FeatureRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.label = r.at("label").get<int>();
      rec.class_name = r.at("class").get<std::string>();
      rec.split = parse_split(r.at("split").get<std::string>());
      rec.stream1 = r.at("stream1").get<std::string>();
      rec.stream2 = r.at("stream2").get<std::string>();
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt, std::string("manifest: ") + e.what());
  }
  if (m.records.empty()) throw FormatError(FormatError::Kind::kCorrupt, "manifest has no records");
  if (m.class_names.size() < 2) {
    throw FormatError(FormatError::Kind::kCorrupt, "manifest class table needs at least 2 classes");
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path.string());
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw FormatError(FormatError::Kind::kCorrupt, path.string() + ": not valid JSON");
  }
  return manifest_from_json(j, path.parent_path());
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  detail::write_file(path.string(), to_json(m).dump(2) + "\n");
}

bool shape_matches_stream(const Shape& shape, const StreamShape& stream) {
  if (shape.size() < 2 || shape.back() != stream.depth) return false;
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return rows == stream.length;
}

ValidationReport validate_manifest(const Manifest& m, bool check_files) {
  ValidationReport v;
  std::map<std::string, Split> seen;
  const int k = static_cast<int>(m.class_names.size());
  if (m.records.empty()) v.failures.push_back("manifest has no records");
  for (const auto& r : m.records) {
    const std::string who = "record '" + r.id + "'";
    if (auto it = seen.find(r.id); it != seen.end()) {
      v.failures.push_back(it->second != r.split
                               ? who + " appears in both train and test splits"
                               : who + ": duplicate id");
    } else {
      seen.emplace(r.id, r.split);
    }
    if (r.label < 0 || r.label >= k) {
      v.failures.push_back(who + ": label " + std::to_string(r.label) + " outside [0, " +
                           std::to_string(k) + ")");
    } else {
      if (m.class_names[static_cast<std::size_t>(r.label)] != r.class_name) {
        v.failures.push_back(who + ": class '" + r.class_name + "' does not match label " +
                             std::to_string(r.label) + " ('" +
                             m.class_names[static_cast<std::size_t>(r.label)] + "')");
      }
      ++v.per_class[m.class_names[static_cast<std::size_t>(r.label)]];
    }
    (r.split == Split::kTrain ? v.train : v.test) += 1;
    if (!check_files) continue;
    const std::pair<const std::string*, const StreamShape*> streams[] = {{&r.stream1, &m.stream1},
                                                                         {&r.stream2, &m.stream2}};
    for (int s = 0; s < 2; ++s) {
      const auto path = m.resolve(*streams[s].first);
      const std::string which = s == 0 ? "stream1" : "stream2";
      if (!std::filesystem::exists(path)) {
        v.failures.push_back(who + ": " + which + " file '" + path.string() + "' is missing");
        continue;
      }
      try {
        const Shape shape = read_tensor_shape(path.string());
        if (!shape_matches_stream(shape, *streams[s].second)) {
          v.failures.push_back(who + ": " + which + " has shape " + shape_to_string(shape) +
                               ", manifest declares " + to_string(*streams[s].second));
        }
      } catch (const Error& e) {
        v.failures.push_back(who + ": " + which + ": " + e.what());
      }
    }
  }
  return v;
}

namespace {

TensorF load_stream(const Manifest& m, const FeatureRecord& r, const std::string& rel,
                    const StreamShape& declared, const char* which) {
  TensorF t = read_tensor(m.resolve(rel).string());
  if (!shape_matches_stream(t.shape(), declared)) {
    throw ShapeError("record '" + r.id + "': " + which + " has shape " +
                     shape_to_string(t.shape()) + ", manifest declares " + to_string(declared));
  }
  return reshape(t, {declared.length, declared.depth});
}

}  // namespace

Dataset load_dataset(const Manifest& m, const LoadOptions& options) {
  Dataset d{m.class_names, m.stream1, m.stream2, {}};
  const int k = static_cast<int>(m.class_names.size());
  for (const auto& r : m.records) {
    if (options.split && r.split != *options.split) continue;
    if (r.label < 0 || r.label >= k) {
      throw ShapeError("record '" + r.id + "': label " + std::to_string(r.label) + " out of range");
    }
    FeatureStreamPair<float> s;
    s.id = r.id;
    s.label = r.label;
    if (options.stream1) s.stream1 = load_stream(m, r, r.stream1, m.stream1, "stream1");
    if (options.stream2) s.stream2 = load_stream(m, r, r.stream2, m.stream2, "stream2");
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace relfuse
