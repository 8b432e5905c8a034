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

#ifndef RELFUSE_METRICS_HPP_
#define RELFUSE_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace relfuse {

/// k x k counts, rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k, std::vector<std::string> class_names = {});

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * k_ + predicted];
  }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1) {
    counts_[truth * k_ + predicted] += n;
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;

  const std::vector<std::string>& class_names() const { return names_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::string> names_;
};

/// Errors name the first offending index.
ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions,
                          std::size_t k, std::vector<std::string> class_names = {});

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0, recall = 0, f1 = 0, specificity = 0;
  // Set when the denominator was zero; the value is then reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool specificity_undefined = false;

  bool operator==(const ClassMetrics&) const = default;
};

/// Macro averages over classes, multi-class MCC from the full matrix.
struct MetricReport {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double mcc = 0;
  double specificity = 0;
  bool mcc_undefined = false;
  std::uint64_t total = 0;
  std::vector<ClassMetrics> per_class;

  bool operator==(const MetricReport&) const = default;
};

MetricReport compute_metrics(const ConfusionMatrix& cm);

nlohmann::json to_json(const MetricReport& report, const std::vector<std::string>& class_names = {});
MetricReport metric_report_from_json(const nlohmann::json& j);

std::string confusion_csv(const ConfusionMatrix& cm);
std::string report_table(const MetricReport& report, const ConfusionMatrix& cm);

struct ReportFiles {
  std::filesystem::path json;
  std::filesystem::path csv;
  std::filesystem::path text;
};

/// Writes metrics.json, confusion_matrix.csv and report.txt into `dir`.
ReportFiles render_report(const MetricReport& report, const ConfusionMatrix& cm,
                          const std::filesystem::path& dir);

}  // namespace relfuse

#endif  // RELFUSE_METRICS_HPP_
