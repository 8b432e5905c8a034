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

#include "relfuse/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "byte_io.hpp"
#include "relfuse/errors.hpp"

namespace relfuse {

ConfusionMatrix::ConfusionMatrix(std::size_t k, std::vector<std::string> class_names)
    : k_(k), counts_(k * k, 0), names_(std::move(class_names)) {
  if (k < 2) throw ConfigError("confusion matrix needs at least 2 classes");
  if (names_.empty()) {
    for (std::size_t c = 0; c < k; ++c) names_.push_back("class_" + std::to_string(c));
  }
  if (names_.size() != k) {
    throw ConfigError("confusion matrix: " + std::to_string(names_.size()) + " class names for " +
                      std::to_string(k) + " classes");
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto v : counts_) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < k_; ++c) n += at(c, c);
  return n;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t j = 0; j < k_; ++j) n += at(c, j);
  return n;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < k_; ++i) n += at(i, c);
  return n;
}

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions,
                          std::size_t k, std::vector<std::string> class_names) {
  if (labels.empty()) throw ShapeError("confusion: no samples");
  if (labels.size() != predictions.size()) {
    throw ShapeError("confusion: " + std::to_string(labels.size()) + " labels but " +
                     std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm(k, std::move(class_names));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || static_cast<std::size_t>(t) >= k || p < 0 || static_cast<std::size_t>(p) >= k) {
      throw ShapeError("confusion: value out of range [0, " + std::to_string(k) + ") at index " +
                       std::to_string(i) + " (label " + std::to_string(t) + ", prediction " +
                       std::to_string(p) + ")");
    }
    cm.add(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& undefined) {
  if (den == 0) {
    undefined = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricReport compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  const std::uint64_t total = cm.total();
  if (total == 0) throw ShapeError("compute_metrics: confusion matrix is empty");

  MetricReport r;
  r.total = total;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics& m = r.per_class[c];
    m.tp = cm.at(c, c);
    m.fn = cm.row_sum(c) - m.tp;
    m.fp = cm.col_sum(c) - m.tp;
    m.tn = total - m.tp - m.fn - m.fp;
    m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
    m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
    m.specificity = ratio(m.tn, m.tn + m.fp, m.specificity_undefined);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_undefined = true;
    }
    r.precision += m.precision;
    r.recall += m.recall;
    r.f1 += m.f1;
    r.specificity += m.specificity;
  }
  const double kd = static_cast<double>(k);
  r.precision /= kd;
  r.recall /= kd;
  r.f1 /= kd;
  r.specificity /= kd;

  // Multi-class MCC:
  //   (c * s - sum_k p_k t_k) / sqrt((s^2 - sum_k p_k^2) (s^2 - sum_k t_k^2))
  // with c = trace, s = total, p_k = predicted counts, t_k = true counts.
  const double s = static_cast<double>(total);
  const double c = static_cast<double>(cm.trace());
  double pt = 0, pp = 0, tt = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double p = static_cast<double>(cm.col_sum(i));
    const double t = static_cast<double>(cm.row_sum(i));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  const double den = (s * s - pp) * (s * s - tt);
  if (den > 0.0) {
    r.mcc = (c * s - pt) / std::sqrt(den);
  } else {
    r.mcc_undefined = true;
  }
  return r;
}

nlohmann::json to_json(const MetricReport& r, const std::vector<std::string>& class_names) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const ClassMetrics& m = r.per_class[c];
    nlohmann::json undefined = nlohmann::json::array();
    if (m.precision_undefined) undefined.push_back("precision");
    if (m.recall_undefined) undefined.push_back("recall");
    if (m.f1_undefined) undefined.push_back("f1");
    if (m.specificity_undefined) undefined.push_back("specificity");
    per_class.push_back({
        {"class", c < class_names.size() ? class_names[c] : "class_" + std::to_string(c)},
        {"tp", m.tp},
        {"fp", m.fp},
        {"fn", m.fn},
        {"tn", m.tn},
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"specificity", m.specificity},
        {"undefined", undefined},
    });
  }
  return {
      {"accuracy", r.accuracy},
      {"precision", r.precision},
      {"recall", r.recall},
      {"f1", r.f1},
      {"mcc", r.mcc},
      {"mcc_undefined", r.mcc_undefined},
      {"specificity", r.specificity},
      {"averaging", "macro"},
      {"total", r.total},
      {"per_class", per_class},
  };
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.mcc = j.at("mcc").get<double>();
    r.mcc_undefined = j.at("mcc_undefined").get<bool>();
    r.specificity = j.at("specificity").get<double>();
    r.total = j.at("total").get<std::uint64_t>();
    for (const auto& pc : j.at("per_class")) {
      ClassMetrics m;
      m.tp = pc.at("tp").get<std::uint64_t>();
      m.fp = pc.at("fp").get<std::uint64_t>();
      m.fn = pc.at("fn").get<std::uint64_t>();
      m.tn = pc.at("tn").get<std::uint64_t>();
      m.precision = pc.at("precision").get<double>();
      m.recall = pc.at("recall").get<double>();
      m.f1 = pc.at("f1").get<double>();
      m.specificity = pc.at("specificity").get<double>();
      for (const auto& u : pc.at("undefined")) {
        const auto name = u.get<std::string>();
        if (name == "precision") m.precision_undefined = true;
        if (name == "recall") m.recall_undefined = true;
        if (name == "f1") m.f1_undefined = true;
        if (name == "specificity") m.specificity_undefined = true;
      }
      r.per_class.push_back(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt, std::string("metrics JSON: ") + e.what());
  }
  return r;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\predicted";
  for (const auto& name : cm.class_names()) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    os << cm.class_names()[i];
    for (std::size_t j = 0; j < cm.num_classes(); ++j) os << ',' << cm.at(i, j);
    os << '\n';
  }
  return os.str();
}

std::string report_table(const MetricReport& r, const ConfusionMatrix& cm) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9s %9s %11s\n", "", "Accuracy",
                "Precision", "Recall", "F1-score", "MCC", "Specificity");
  os << line;
  std::snprintf(line, sizeof line, "%-10s %9.3f %9.3f %9.3f %9.3f %9.3f %11.3f\n", "macro",
                r.accuracy, r.precision, r.recall, r.f1, r.mcc, r.specificity);
  os << line << "\nsamples: " << r.total << (r.mcc_undefined ? "  (MCC undefined, reported as 0)" : "")
     << "\n\nper class:\n";
  std::snprintf(line, sizeof line, "%-28s %9s %9s %9s %11s %8s\n", "class", "Precision", "Recall",
                "F1-score", "Specificity", "Support");
  os << line;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const ClassMetrics& m = r.per_class[c];
    std::snprintf(line, sizeof line, "%-28s %9.3f %9.3f %9.3f %11.3f %8llu\n",
                  cm.class_names()[c].c_str(), m.precision, m.recall, m.f1, m.specificity,
                  static_cast<unsigned long long>(m.tp + m.fn));
    os << line;
  }
  return os.str();
}

ReportFiles render_report(const MetricReport& report, const ConfusionMatrix& cm,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw FormatError(FormatError::Kind::kIo,
                      "cannot create report directory '" + dir.string() + "': " + ec.message());
  }
  ReportFiles files{dir / "metrics.json", dir / "confusion_matrix.csv", dir / "report.txt"};
  detail::write_file(files.json.string(), to_json(report, cm.class_names()).dump(2) + "\n");
  detail::write_file(files.csv.string(), confusion_csv(cm));
  detail::write_file(files.text.string(), report_table(report, cm));
  return files;
}

}  // namespace relfuse
