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

#include "relfuse/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>

#include "relfuse/config.hpp"
#include "relfuse/errors.hpp"
#include "relfuse/layers.hpp"
#include "relfuse/model.hpp"
#include "relfuse/relational.hpp"
#include "relfuse/rng.hpp"

namespace relfuse {

namespace {

using TD = Tensor<double>;

struct Probe {
  std::string name;
  TD* value;
  TD analytic;
};

struct Problem {
  std::vector<Probe> probes;
  std::function<double()> loss;
};

TD randn(Shape shape, Rng& rng, double scale = 1.0) {
  TD t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

double project(const TD& y, const TD& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

Mlp<double> random_mlp(std::size_t in, const std::vector<std::size_t>& widths,
                       const std::vector<Activation>& acts, Rng& rng) {
  Mlp<double> m;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::size_t fan_in = l == 0 ? in : widths[l - 1];
    m.layers.push_back({randn({fan_in, widths[l]}, rng, 1.0 / std::sqrt(double(fan_in))),
                        randn({widths[l]}, rng, 0.5)});
    m.activations.push_back(acts[l]);
  }
  return m;
}

void add_mlp_probes(Problem& p, const std::string& prefix, Mlp<double>& m,
                    const std::vector<DenseParams<double>>& grads) {
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    p.probes.push_back({prefix + "." + std::to_string(l) + ".weight", &m.layers[l].weight,
                        grads[l].weight});
    p.probes.push_back({prefix + "." + std::to_string(l) + ".bias", &m.layers[l].bias,
                        grads[l].bias});
  }
}

// Each builder owns its tensors through the shared state captured by the
// loss closure; probes point into that state.
using Builder = std::function<Problem(Rng&, std::shared_ptr<void>&)>;

template <typename State>
State& hold(std::shared_ptr<void>& keep) {
  auto s = std::make_shared<State>();
  keep = s;
  return *s;
}

Problem dense_problem(Rng& rng, std::shared_ptr<void>& keep, Activation act) {
  struct S { TD x, w, b, r; Activation act; };
  S& s = hold<S>(keep);
  s.x = randn({4, 5}, rng);
  s.w = randn({5, 3}, rng);
  s.b = randn({3}, rng);
  s.r = randn({4, 3}, rng);
  s.act = act;
  DenseCache<double> cache;
  dense_forward(s.x, s.w, s.b, act, &cache);
  DenseGrads<double> g = dense_backward(cache, s.w, s.r);
  Problem p;
  p.probes = {{"x", &s.x, g.input}, {"weight", &s.w, g.weight}, {"bias", &s.b, g.bias}};
  p.loss = [&s] { return project(dense_forward(s.x, s.w, s.b, s.act), s.r); };
  return p;
}

Problem conv_problem(Rng& rng, std::shared_ptr<void>& keep) {
  struct S { TD x, k, b, r; };
  S& s = hold<S>(keep);
  s.x = randn({7, 3}, rng);
  s.k = randn({3, 3, 4}, rng);
  s.b = randn({4}, rng);
  s.r = randn({5, 4}, rng);
  Conv1dCache<double> cache;
  conv1d_forward(s.x, s.k, s.b, &cache);
  Conv1dGrads<double> g = conv1d_backward(cache, s.k, s.r);
  Problem p;
  p.probes = {{"x", &s.x, g.input}, {"kernel", &s.k, g.kernel}, {"bias", &s.b, g.bias}};
  p.loss = [&s] { return project(conv1d_forward(s.x, s.k, s.b), s.r); };
  return p;
}

Problem maxpool_problem(Rng& rng, std::shared_ptr<void>& keep) {
  struct S { TD x, r; };
  S& s = hold<S>(keep);
  s.x = randn({7, 3}, rng);
  s.r = randn({3, 3}, rng);
  MaxPoolCache<double> cache;
  maxpool1d_forward(s.x, 2, &cache);
  Problem p;
  p.probes = {{"x", &s.x, maxpool1d_backward(cache, s.r)}};
  p.loss = [&s] { return project(maxpool1d_forward(s.x, 2).output, s.r); };
  return p;
}

Problem batchnorm_problem(Rng& rng, std::shared_ptr<void>& keep) {
  struct S { TD x, r; BatchNormParams<double> bn; };
  S& s = hold<S>(keep);
  s.x = randn({6, 4}, rng, 2.0);
  s.bn.gamma = randn({4}, rng);
  s.bn.beta = randn({4}, rng, 0.5);
  s.bn.running_mean = TD::zeros({4});
  s.bn.running_var = TD::full({4}, 1.0);
  s.r = randn({6, 4}, rng);
  BatchNormCache<double> cache;
  batchnorm_relu_forward(s.x, s.bn, Phase::kTrain, {}, &cache);
  BatchNormGrads<double> g = batchnorm_relu_backward(cache, s.bn, s.r);
  Problem p;
  p.probes = {{"x", &s.x, g.input}, {"gamma", &s.bn.gamma, g.gamma}, {"beta", &s.bn.beta, g.beta}};
  p.loss = [&s] {
    return project(batchnorm_relu_forward(s.x, s.bn, Phase::kTrain).output, s.r);
  };
  return p;
}

Problem dropout_problem(Rng& rng, std::shared_ptr<void>& keep) {
  struct S { TD x, r; std::uint64_t mask_seed; };
  S& s = hold<S>(keep);
  s.x = randn({5, 4}, rng);
  s.r = randn({5, 4}, rng);
  s.mask_seed = rng.next_u64();
  DropoutCache<double> cache;
  Rng mask(s.mask_seed);
  dropout_forward(s.x, 0.25, mask, Phase::kTrain, &cache);
  Problem p;
  p.probes = {{"x", &s.x, dropout_backward(cache, s.r)}};
  p.loss = [&s] {
    Rng m(s.mask_seed);
    return project(dropout_forward(s.x, 0.25, m, Phase::kTrain), s.r);
  };
  return p;
}

Problem lstm_problem(Rng& rng, std::shared_ptr<void>& keep) {
  struct S { TD x, r; LstmParams<double> lstm; };
  S& s = hold<S>(keep);
  s.x = randn({3, 4}, rng);
  s.lstm.kernel = randn({4, 20}, rng, 0.5);
  s.lstm.recurrent_kernel = randn({5, 20}, rng, 0.5);
  s.lstm.bias = randn({20}, rng, 0.5);
  s.r = randn({3, 5}, rng);
  LstmCache<double> cache;
  lstm_forward(s.x, s.lstm, &cache);
  LstmGrads<double> g = lstm_backward(cache, s.lstm, s.r);
  Problem p;
  p.probes = {{"x", &s.x, g.input},
              {"kernel", &s.lstm.kernel, g.kernel},
              {"recurrent_kernel", &s.lstm.recurrent_kernel, g.recurrent_kernel},
              {"bias", &s.lstm.bias, g.bias}};
  p.loss = [&s] { return project(lstm_forward(s.x, s.lstm), s.r); };
  return p;
}

Problem softmax_problem(Rng& rng, std::shared_ptr<void>& keep) {
  struct S { TD logits; std::vector<int> labels; };
  S& s = hold<S>(keep);
  s.logits = randn({4, 5}, rng, 2.0);
  for (int i = 0; i < 4; ++i) s.labels.push_back(static_cast<int>(rng.below(5)));
  const SoftmaxXent<double> fwd = softmax_xent(s.logits, s.labels);
  Problem p;
  p.probes = {{"logits", &s.logits, softmax_xent_backward(fwd.probs, s.labels)}};
  p.loss = [&s] { return softmax_xent(s.logits, s.labels).loss; };
  return p;
}

Problem relation_problem(Rng& rng, std::shared_ptr<void>& keep, bool single) {
  struct S { TD b1, b2, r; Mlp<double> g, h; bool single; };
  S& s = hold<S>(keep);
  s.single = single;
  constexpr std::size_t f = 4;
  s.b1 = randn({3, f}, rng);
  if (!single) s.b2 = randn({2, f}, rng);
  s.g = random_mlp(2 * f, {6, 5}, {Activation::kRelu, Activation::kRelu}, rng);
  s.h = random_mlp(5, {4, 3}, {Activation::kRelu, Activation::kNone}, rng);
  s.r = randn({3}, rng);
  // Small blocks so the blocked accumulation path is exercised.
  const RelationOptions opts{4};
  RelationCache<double> cache;
  if (single) {
    relation_forward_single(s.b1, s.g, s.h, opts, &cache);
  } else {
    relation_forward(s.b1, s.b2, s.g, s.h, opts, &cache);
  }
  RelationGrads<double> g = relation_backward(cache, s.g, s.h, s.r);
  Problem p;
  p.probes.push_back({"beta1", &s.b1, g.beta1});
  if (!single) p.probes.push_back({"beta2", &s.b2, g.beta2});
  add_mlp_probes(p, "g", s.g, g.g);
  add_mlp_probes(p, "h", s.h, g.h);
  p.loss = [&s, opts] {
    const TD gamma = s.single ? relation_forward_single(s.b1, s.g, s.h, opts)
                              : relation_forward(s.b1, s.b2, s.g, s.h, opts);
    return project(gamma, s.r);
  };
  return p;
}

Problem model_problem(Rng& rng, std::shared_ptr<void>& keep, StreamMode mode, GammaSequence seq) {
  struct S {
    ModelConfig config;
    ModelParams<double> params;
    std::vector<FeatureStreamPair<double>> batch;
    std::uint64_t dropout_seed;
  };
  S& s = hold<S>(keep);
  s.config = tiny_model_config();
  s.config.mode = mode;
  s.config.gamma_sequence = seq;
  s.config.seed = rng.next_u64();
  s.params = init_params<double>(s.config);
  // Non-trivial BatchNorm affine and biases so no gradient is structurally zero.
  for (auto& nt : named_tensors(s.params)) {
    if (!nt.trainable) continue;
    if (nt.name.ends_with("gamma")) {
      for (auto& v : nt.tensor->data()) v = 1.0 + 0.3 * rng.normal();
    } else if (nt.name.ends_with("bias") || nt.name.ends_with("beta")) {
      for (auto& v : nt.tensor->data()) v += 0.1 * rng.normal();
    }
  }
  for (int i = 0; i < 3; ++i) {
    FeatureStreamPair<double> sample;
    sample.label = i % static_cast<int>(s.config.num_classes);
    sample.id = "s" + std::to_string(i);
    if (s.config.uses_stream1())
      sample.stream1 = randn({s.config.stream1.length, s.config.stream1.depth}, rng);
    if (s.config.uses_stream2())
      sample.stream2 = randn({s.config.stream2.length, s.config.stream2.depth}, rng);
    s.batch.push_back(std::move(sample));
  }
  s.dropout_seed = rng.next_u64();

  Rng drop(s.dropout_seed);
  ForwardResult<double> fwd =
      forward<double>(s.config, s.params, std::span<const FeatureStreamPair<double>>(s.batch),
                      Phase::kTrain, drop);
  Gradients<double> grads = backward_full(fwd.cache, s.config, s.params);

  Problem p;
  auto values = named_tensors(s.params);
  auto analytic = named_tensors(grads.params);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].trainable) continue;
    p.probes.push_back({values[i].name, values[i].tensor, *analytic[i].tensor});
  }
  for (std::size_t i = 0; i < s.batch.size(); ++i) {
    if (s.config.uses_stream1())
      p.probes.push_back({"stream1/" + std::to_string(i), &s.batch[i].stream1, grads.stream1[i]});
    if (s.config.uses_stream2())
      p.probes.push_back({"stream2/" + std::to_string(i), &s.batch[i].stream2, grads.stream2[i]});
  }
  p.loss = [&s] {
    Rng d(s.dropout_seed);
    return forward<double>(s.config, s.params,
                           std::span<const FeatureStreamPair<double>>(s.batch), Phase::kTrain, d)
        .loss;
  };
  return p;
}

struct Component {
  std::string name;
  bool end_to_end;
  Builder build;
};

const std::vector<Component>& components() {
  static const std::vector<Component> list = {
      {"dense_linear", false,
       [](Rng& r, std::shared_ptr<void>& k) { return dense_problem(r, k, Activation::kNone); }},
      {"dense_relu", false,
       [](Rng& r, std::shared_ptr<void>& k) { return dense_problem(r, k, Activation::kRelu); }},
      {"conv1d", false, conv_problem},
      {"maxpool1d", false, maxpool_problem},
      {"batchnorm_relu", false, batchnorm_problem},
      {"dropout", false, dropout_problem},
      {"lstm", false, lstm_problem},
      {"softmax_xent", false, softmax_problem},
      {"relation", false,
       [](Rng& r, std::shared_ptr<void>& k) { return relation_problem(r, k, false); }},
      {"relation_single", false,
       [](Rng& r, std::shared_ptr<void>& k) { return relation_problem(r, k, true); }},
      {"model_two_stream", true,
       [](Rng& r, std::shared_ptr<void>& k) {
         return model_problem(r, k, StreamMode::kTwoStream, GammaSequence::kSingleStep);
       }},
      {"model_stream1_only", true,
       [](Rng& r, std::shared_ptr<void>& k) {
         return model_problem(r, k, StreamMode::kStream1Only, GammaSequence::kSingleStep);
       }},
      {"model_stream2_only", true,
       [](Rng& r, std::shared_ptr<void>& k) {
         return model_problem(r, k, StreamMode::kStream2Only, GammaSequence::kSingleStep);
       }},
      {"model_scalar_steps", true,
       [](Rng& r, std::shared_ptr<void>& k) {
         return model_problem(r, k, StreamMode::kTwoStream, GammaSequence::kScalarSteps);
       }},
  };
  return list;
}

}  // namespace

bool GradcheckReport::passed() const {
  return !components.empty() &&
         std::all_of(components.begin(), components.end(),
                     [](const ComponentResult& c) { return c.passed(); });
}

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& c : components()) names.push_back(c.name);
  return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  if (options.seeds.empty()) throw ConfigError("gradcheck: no seeds");
  if (!(options.step > 0)) throw ConfigError("gradcheck: step must be positive");
  const auto known = gradcheck_components();
  for (const auto& name : options.only) {
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw ConfigError("gradcheck: unknown component '" + name + "'");
  }
  if (options.corrupt && std::find(known.begin(), known.end(), *options.corrupt) == known.end())
    throw ConfigError("gradcheck: unknown component '" + *options.corrupt + "'");

  GradcheckReport report;
  for (std::size_t ci = 0; ci < components().size(); ++ci) {
    const Component& comp = components()[ci];
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), comp.name) == options.only.end())
      continue;
    ComponentResult res;
    res.name = comp.name;
    res.end_to_end = comp.end_to_end;
    res.tolerance = comp.end_to_end ? options.model_tolerance : options.layer_tolerance;
    res.zero_bound = options.zero_gradient_bound;
    for (std::uint64_t seed : options.seeds) {
      Rng rng = Rng::derive(seed, {401, ci});
      std::shared_ptr<void> keep;
      Problem p = comp.build(rng, keep);
      if (options.corrupt && *options.corrupt == comp.name) {
        double& a = p.probes.front().analytic.data().front();
        a += 1e-2 * (1.0 + std::abs(a));
      }
      for (Probe& probe : p.probes) {
        const std::size_t n = probe.value->size();
        std::vector<double> numeric(n);
        for (std::size_t i = 0; i < n; ++i) {
          double& x = probe.value->data()[i];
          const double saved = x;
          x = saved + options.step;
          const double up = p.loss();
          x = saved - options.step;
          const double down = p.loss();
          x = saved;
          numeric[i] = (up - down) / (2 * options.step);
        }
        res.checked += n;
        const auto& analytic = probe.analytic.data();
        double max_a = 0, max_n = 0, max_diff = 0;
        std::size_t at = 0;
        for (std::size_t i = 0; i < n; ++i) {
          max_a = std::max(max_a, std::abs(analytic[i]));
          max_n = std::max(max_n, std::abs(numeric[i]));
          const double diff = std::abs(analytic[i] - numeric[i]);
          if (diff > max_diff) {
            max_diff = diff;
            at = i;
          }
        }
        if (max_a < 1e-15) {
          res.zero_gradient.push_back(std::to_string(seed) + ":" + probe.name);
          res.max_zero_numeric = std::max(res.max_zero_numeric, max_n);
          continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
          res.max_elementwise_error =
              std::max(res.max_elementwise_error, std::abs(analytic[i] - numeric[i]) / denom);
        }
        const double err = max_diff / std::max({max_a, max_n, 1e-8});
        if (res.worst.empty() || err > res.max_rel_error) {
          res.max_rel_error = err;
          res.worst = std::to_string(seed) + ":" + probe.name + "[" + std::to_string(at) + "]";
          res.worst_analytic = analytic[at];
          res.worst_numeric = numeric[at];
        }
      }
    }
    report.components.push_back(std::move(res));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace relfuse
