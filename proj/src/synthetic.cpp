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

#include "relfuse/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "relfuse/errors.hpp"
#include "relfuse/rng.hpp"
#include "relfuse/tensor_io.hpp"

namespace relfuse {

namespace {

enum SynthTag : std::uint64_t { kPrototypes = 201, kSamples = 202 };

std::size_t code_base(std::size_t k) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
}

std::vector<std::vector<double>> prototypes(std::size_t count, std::size_t depth, double scale,
                                            Rng& rng) {
  std::vector<std::vector<double>> p(count, std::vector<double>(depth));
  for (auto& v : p)
    for (auto& x : v) x = scale * rng.normal();
  return p;
}

TensorF draw_stream(const std::vector<double>& mean, std::size_t length, double noise, Rng& rng) {
  const std::size_t depth = mean.size();
  TensorF t({length, depth});
  for (std::size_t l = 0; l < length; ++l)
    for (std::size_t d = 0; d < depth; ++d)
      t(l, d) = static_cast<float>(mean[d] + noise * rng.normal());
  return t;
}

void append_features(std::vector<double>& out, const FeatureStreamPair<float>& s, bool use1,
                     bool use2) {
  if (use1)
    for (float v : s.stream1.data()) out.push_back(v);
  if (use2)
    for (float v : s.stream2.data()) out.push_back(v);
}

}  // namespace

double nearest_mean_probe(const std::vector<const FeatureStreamPair<float>*>& train,
                          const std::vector<const FeatureStreamPair<float>*>& test,
                          std::size_t num_classes, bool use_stream1, bool use_stream2) {
  if (train.empty() || test.empty()) throw ShapeError("nearest_mean_probe: empty split");
  std::vector<std::vector<double>> means(num_classes);
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto* s : train) {
    std::vector<double> f;
    append_features(f, *s, use_stream1, use_stream2);
    auto& m = means[static_cast<std::size_t>(s->label)];
    if (m.empty()) m.assign(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) m[i] += f[i];
    ++counts[static_cast<std::size_t>(s->label)];
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    for (auto& v : means[c]) v /= static_cast<double>(counts[c]);

  std::size_t correct = 0;
  for (const auto* s : test) {
    std::vector<double> f;
    append_features(f, *s, use_stream1, use_stream2);
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (means[c].empty()) continue;
      double dist = 0;
      for (std::size_t i = 0; i < f.size(); ++i) dist += (f[i] - means[c][i]) * (f[i] - means[c][i]);
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (static_cast<int>(best) == s->label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 3) {
    throw ConfigError("synthetic data needs at least 3 classes so neither stream alone suffices");
  }
  if (spec.per_class < 2) throw ConfigError("synthetic data needs at least 2 samples per class");
  if (spec.stream1.length == 0 || spec.stream1.depth == 0 || spec.stream2.length == 0 ||
      spec.stream2.depth == 0) {
    throw ConfigError("synthetic stream shapes must be positive");
  }
  const std::size_t k = spec.num_classes;
  const std::size_t m = code_base(k);
  const std::size_t values2 = (k + m - 1) / m;

  Rng proto_rng = Rng::derive(spec.seed, {kPrototypes});
  const auto mu1 = prototypes(m, spec.stream1.depth, spec.signal, proto_rng);
  const auto mu2 = prototypes(values2, spec.stream2.depth, spec.signal, proto_rng);

  SyntheticCorpus corpus;
  Dataset& d = corpus.dataset;
  d.stream1 = spec.stream1;
  d.stream2 = spec.stream2;
  for (std::size_t c = 0; c < k; ++c) d.class_names.push_back("class_" + std::to_string(c));

  Rng rng = Rng::derive(spec.seed, {kSamples});
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t n = 0; n < spec.per_class; ++n) {
      FeatureStreamPair<float> s;
      char id[32];
      std::snprintf(id, sizeof id, "c%zu_%04zu", c, n);
      s.id = id;
      s.label = static_cast<int>(c);
      s.stream1 = draw_stream(mu1[c % m], spec.stream1.length, spec.noise, rng);
      s.stream2 = draw_stream(mu2[c / m], spec.stream2.length, spec.noise, rng);
      d.samples.push_back(std::move(s));
      corpus.splits.push_back(n % 2 == 0 ? Split::kTrain : Split::kTest);
    }
  }

  std::vector<const FeatureStreamPair<float>*> train, test;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    (corpus.splits[i] == Split::kTrain ? train : test).push_back(&d.samples[i]);
  corpus.probe_stream1 = nearest_mean_probe(train, test, k, true, false);
  corpus.probe_stream2 = nearest_mean_probe(train, test, k, false, true);
  corpus.probe_combined = nearest_mean_probe(train, test, k, true, true);
  if (!(corpus.probe_stream1 < corpus.probe_combined && corpus.probe_stream2 < corpus.probe_combined)) {
    throw Error("synthetic self-check failed: single-stream probes (" +
                std::to_string(corpus.probe_stream1) + ", " + std::to_string(corpus.probe_stream2) +
                ") do not fall below the combined probe (" +
                std::to_string(corpus.probe_combined) + "); raise signal or lower noise");
  }
  return corpus;
}

SyntheticOutput generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  SyntheticOutput out;
  out.corpus = make_synthetic(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) {
    throw FormatError(FormatError::Kind::kIo,
                      "cannot create '" + (out_dir / "features").string() + "': " + ec.message());
  }
  Manifest& m = out.manifest;
  const Dataset& d = out.corpus.dataset;
  m.class_names = d.class_names;
  m.stream1 = d.stream1;
  m.stream2 = d.stream2;
  m.base_dir = out_dir;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    FeatureRecord r;
    r.id = s.id;
    r.label = s.label;
    r.class_name = d.class_names[static_cast<std::size_t>(s.label)];
    r.split = out.corpus.splits[i];
    r.stream1 = "features/" + s.id + "_s1.fts";
    r.stream2 = "features/" + s.id + "_s2.fts";
    write_tensor(m.resolve(r.stream1).string(), s.stream1);
    write_tensor(m.resolve(r.stream2).string(), s.stream2);
    m.records.push_back(std::move(r));
  }
  out.manifest_path = out_dir / "manifest.json";
  save_manifest(m, out.manifest_path);
  return out;
}

}  // namespace relfuse
