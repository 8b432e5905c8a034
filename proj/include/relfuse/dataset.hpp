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

#ifndef RELFUSE_DATASET_HPP_
#define RELFUSE_DATASET_HPP_

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "relfuse/config.hpp"
#include "relfuse/model.hpp"
#include "relfuse/tensor.hpp"

namespace relfuse {

enum class Split { kTrain, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct FeatureRecord {
  std::string id;
  int label = 0;
  std::string class_name;
  std::string stream1;  // path relative to the manifest directory
  std::string stream2;
  Split split = Split::kTrain;

  bool operator==(const FeatureRecord&) const = default;
};

// Manifest JSON:
//
//   {
//     "header": {
//       "format": "relfuse-manifest", "version": 1,
//       "classes": ["name0", "name1", ...],          label i -> classes[i]
//       "streams": {"stream1": [L1, D1], "stream2": [L2, D2]}
//     },
//     "records": [
//       {"id": "...", "label": 0, "class": "name0", "split": "train",
//        "stream1": "rel/path_a.fts", "stream2": "rel/path_b.fts"}, ...
//     ]
//   }
//
// Stream files may hold (L, D) or (W, H, D) with W * H = L; the latter is
// flattened row-major so spatial position (w, h) becomes row w * H + h.
struct Manifest {
  std::vector<std::string> class_names;
  StreamShape stream1;
  StreamShape stream2;
  std::vector<FeatureRecord> records;
  std::filesystem::path base_dir;  // directory of the manifest file

  std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir);

/// Parses a manifest. Throws FormatError for unreadable or malformed files
/// and for manifests without records.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct ValidationReport {
  std::vector<std::string> failures;
  std::map<std::string, std::size_t> per_class;
  std::size_t train = 0;
  std::size_t test = 0;

  bool ok() const { return failures.empty(); }
};

/// Checks ids are unique (so splits are disjoint), labels are in range and
/// agree with the class table, and, when check_files is set, that every
/// stream file exists and matches the declared shape.
ValidationReport validate_manifest(const Manifest& m, bool check_files = true);

/// True if a file of this shape holds a stream of the declared (L, D).
bool shape_matches_stream(const Shape& shape, const StreamShape& stream);

struct Dataset {
  std::vector<std::string> class_names;
  StreamShape stream1;
  StreamShape stream2;
  std::vector<FeatureStreamPair<float>> samples;
};

struct LoadOptions {
  std::optional<Split> split;  // nullopt: every record
  bool stream1 = true;
  bool stream2 = true;
};

/// Reads the stream tensors of the selected records, reshaped to (L, D).
/// Throws ShapeError naming the record if a file disagrees with the header.
Dataset load_dataset(const Manifest& m, const LoadOptions& options = {});

}  // namespace relfuse

#endif  // RELFUSE_DATASET_HPP_
