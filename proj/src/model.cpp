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

#include "relfuse/model.hpp"

#include <algorithm>
#include <string>
#include <utility>

namespace relfuse {

namespace {

// Tags for Rng::derive, one per initialized component.
enum InitTag : std::uint64_t {
  kInitEncoder1 = 101,
  kInitEncoder2 = 102,
  kInitFg = 103,
  kInitFh = 104,
  kInitLstm = 105,
  kInitHead = 106,
};

template <typename T>
EncoderParams<T> init_encoder(const StreamShape& shape, const ModelConfig& c, Rng& rng) {
  const std::size_t k = c.conv_kernel, f = c.conv_filters;
  EncoderParams<T> e;
  e.kernel = glorot_uniform<T>({k, shape.depth, f}, k * shape.depth, k * f, rng);
  e.bias = Tensor<T>({f});
  e.bn.gamma = Tensor<T>::full({f}, T{1});
  e.bn.beta = Tensor<T>({f});
  e.bn.running_mean = Tensor<T>({f});
  e.bn.running_var = Tensor<T>::full({f}, T{1});
  return e;
}

template <typename T>
Mlp<T> init_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                bool relu_output, Rng& rng) {
  Mlp<T> m;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(out);
  std::size_t prev = in;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    m.layers.push_back({glorot_uniform<T>({prev, widths[l]}, prev, widths[l], rng),
                        Tensor<T>({widths[l]})});
    const bool last = l + 1 == widths.size();
    m.activations.push_back(!last || relu_output ? Activation::kRelu : Activation::kNone);
    prev = widths[l];
  }
  return m;
}

std::size_t lstm_input_width(const ModelConfig& c) {
  return c.gamma_sequence == GammaSequence::kSingleStep ? c.relation_dim : 1;
}

template <typename P, typename Fn>
void visit_params(P& p, Fn&& fn) {
  auto encoder = [&](auto& enc, const std::string& prefix) {
    if (!enc) return;
    fn(prefix + ".conv.kernel", enc->kernel, true);
    fn(prefix + ".conv.bias", enc->bias, true);
    fn(prefix + ".bn.gamma", enc->bn.gamma, true);
    fn(prefix + ".bn.beta", enc->bn.beta, true);
    fn(prefix + ".bn.running_mean", enc->bn.running_mean, false);
    fn(prefix + ".bn.running_var", enc->bn.running_var, false);
  };
  auto mlp = [&](auto& m, const std::string& prefix) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      fn(prefix + std::to_string(l) + ".weight", m.layers[l].weight, true);
      fn(prefix + std::to_string(l) + ".bias", m.layers[l].bias, true);
    }
  };
  encoder(p.encoder1, "encoder1");
  encoder(p.encoder2, "encoder2");
  mlp(p.fg, "relation.g.");
  mlp(p.fh, "relation.h.");
  fn(std::string("lstm.kernel"), p.lstm.kernel, true);
  fn(std::string("lstm.recurrent_kernel"), p.lstm.recurrent_kernel, true);
  fn(std::string("lstm.bias"), p.lstm.bias, true);
  for (std::size_t l = 0; l < p.head.layers.size(); ++l) {
    fn("fc" + std::to_string(l + 1) + ".weight", p.head.layers[l].weight, true);
    fn("fc" + std::to_string(l + 1) + ".bias", p.head.layers[l].bias, true);
  }
}

template <typename T>
void check_stream(const Tensor<T>& t, const StreamShape& expected, std::size_t sample,
                  const char* which) {
  if (t.rank() != 2 || t.rows() != expected.length || t.cols() != expected.depth) {
    throw ShapeError(std::string(which) + " of sample " + std::to_string(sample) + " has shape " +
                     shape_to_string(t.shape()) + ", model expects " + to_string(expected));
  }
}

template <typename T>
std::vector<Tensor<T>> encoder_forward(const EncoderParams<T>& enc, const ModelConfig& c,
                                       const std::vector<const Tensor<T>*>& inputs, Phase phase,
                                       Rng& rng, EncoderCache<T>* cache,
                                       std::optional<RunningStats<T>>& stats) {
  const std::size_t n = inputs.size();
  if (cache) {
    cache->conv.assign(n, Conv1dCache<T>{});
    cache->pool.assign(n, MaxPoolCache<T>{});
  }
  std::vector<Tensor<T>> conv_out;
  conv_out.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    conv_out.push_back(
        conv1d_forward(*inputs[b], enc.kernel, enc.bias, cache ? &cache->conv[b] : nullptr));
  }
  const std::size_t rows = conv_out.front().rows();
  // BatchNorm statistics span every position of every sample in the batch.
  const Tensor<T> stacked = concat_rows<T>(conv_out);
  BatchNormResult<T> bn = batchnorm_relu_forward(stacked, enc.bn, phase,
                                                 {c.bn_epsilon, c.bn_momentum},
                                                 cache ? &cache->bn : nullptr);
  stats = std::move(bn.updated);
  const Tensor<T> dropped =
      dropout_forward(bn.output, c.dropout, rng, phase, cache ? &cache->dropout : nullptr);
  std::vector<Tensor<T>> betas;
  betas.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    betas.push_back(maxpool1d_forward(slice_rows(dropped, b * rows, rows), c.pool,
                                      cache ? &cache->pool[b] : nullptr)
                        .output);
  }
  if (cache) cache->conv_rows = rows;
  return betas;
}

template <typename T>
struct EncoderGrads {
  Tensor<T> kernel, bias, gamma, beta;
  std::vector<Tensor<T>> inputs;
};

template <typename T>
EncoderGrads<T> encoder_backward(EncoderCache<T>& cache, const EncoderParams<T>& enc,
                                 const std::vector<Tensor<T>>& dbetas) {
  const std::size_t n = dbetas.size();
  std::vector<Tensor<T>> dpooled;
  dpooled.reserve(n);
  for (std::size_t b = 0; b < n; ++b) dpooled.push_back(maxpool1d_backward(cache.pool[b], dbetas[b]));
  const Tensor<T> ddrop = dropout_backward(cache.dropout, concat_rows<T>(dpooled));
  BatchNormGrads<T> bn = batchnorm_relu_backward(cache.bn, enc.bn, ddrop);
  EncoderGrads<T> g;
  g.gamma = std::move(bn.gamma);
  g.beta = std::move(bn.beta);
  for (std::size_t b = 0; b < n; ++b) {
    Conv1dGrads<T> cg =
        conv1d_backward(cache.conv[b], enc.kernel, slice_rows(bn.input, b * cache.conv_rows, cache.conv_rows));
    if (b == 0) {
      g.kernel = std::move(cg.kernel);
      g.bias = std::move(cg.bias);
    } else {
      g.kernel = add(g.kernel, cg.kernel);
      g.bias = add(g.bias, cg.bias);
    }
    g.inputs.push_back(std::move(cg.input));
  }
  return g;
}

template <typename T>
void add_into(std::vector<DenseParams<T>>& into, const std::vector<DenseParams<T>>& from) {
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].weight = add(into[l].weight, from[l].weight);
    into[l].bias = add(into[l].bias, from[l].bias);
  }
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> named_tensors(ModelParams<T>& params) {
  std::vector<NamedTensor<T>> out;
  visit_params(params, [&](const std::string& name, Tensor<T>& t, bool trainable) {
    out.push_back({name, &t, trainable});
  });
  return out;
}

template <typename T>
std::vector<ConstNamedTensor<T>> named_tensors(const ModelParams<T>& params) {
  std::vector<ConstNamedTensor<T>> out;
  visit_params(params, [&](const std::string& name, const Tensor<T>& t, bool trainable) {
    out.push_back({name, &t, trainable});
  });
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& c) {
  c.validate();
  ModelParams<T> p;
  if (c.uses_stream1()) {
    Rng rng = Rng::derive(c.seed, {kInitEncoder1});
    p.encoder1 = init_encoder<T>(c.stream1, c, rng);
  }
  if (c.uses_stream2()) {
    Rng rng = Rng::derive(c.seed, {kInitEncoder2});
    p.encoder2 = init_encoder<T>(c.stream2, c, rng);
  }
  {
    Rng rng = Rng::derive(c.seed, {kInitFg});
    p.fg = init_mlp<T>(2 * c.conv_filters, c.fg_hidden, c.fg_out, true, rng);
  }
  {
    Rng rng = Rng::derive(c.seed, {kInitFh});
    p.fh = init_mlp<T>(c.fg_out, c.fh_hidden, c.relation_dim, false, rng);
  }
  {
    Rng rng = Rng::derive(c.seed, {kInitLstm});
    const std::size_t din = lstm_input_width(c), h = c.lstm_hidden;
    p.lstm.kernel = glorot_uniform<T>({din, 4 * h}, din, 4 * h, rng);
    p.lstm.recurrent_kernel = glorot_uniform<T>({h, 4 * h}, h, 4 * h, rng);
    p.lstm.bias = Tensor<T>({4 * h});
    for (std::size_t u = 0; u < h; ++u) p.lstm.bias[h + u] = T{1};
  }
  {
    Rng rng = Rng::derive(c.seed, {kInitHead});
    const std::vector<std::size_t> hidden(c.fc_dims.begin(), c.fc_dims.end() - 1);
    p.head = init_mlp<T>(c.lstm_hidden, hidden, c.fc_dims.back(), false, rng);
  }
  return p;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& like) {
  ModelParams<T> z = like;
  for (auto& nt : named_tensors(z)) *nt.tensor = Tensor<T>(nt.tensor->shape());
  return z;
}

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& p) {
  auto enc = [](const std::optional<EncoderParams<T>>& e) -> std::optional<EncoderParams<U>> {
    if (!e) return std::nullopt;
    return EncoderParams<U>{e->kernel.template cast<U>(), e->bias.template cast<U>(),
                            {e->bn.gamma.template cast<U>(), e->bn.beta.template cast<U>(),
                             e->bn.running_mean.template cast<U>(),
                             e->bn.running_var.template cast<U>()}};
  };
  auto mlp = [](const Mlp<T>& m) {
    Mlp<U> out;
    out.activations = m.activations;
    for (const auto& l : m.layers)
      out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
    return out;
  };
  ModelParams<U> out;
  out.encoder1 = enc(p.encoder1);
  out.encoder2 = enc(p.encoder2);
  out.fg = mlp(p.fg);
  out.fh = mlp(p.fh);
  out.lstm = {p.lstm.kernel.template cast<U>(), p.lstm.recurrent_kernel.template cast<U>(),
              p.lstm.bias.template cast<U>()};
  out.head = mlp(p.head);
  return out;
}

template <typename T>
void check_params(const ModelConfig& config, const ModelParams<T>& params) {
  const ModelParams<T> expected = init_params<T>(config);
  const auto want = named_tensors(expected);
  const auto got = named_tensors(params);
  for (std::size_t i = 0; i < std::max(want.size(), got.size()); ++i) {
    if (i >= want.size()) throw ShapeError("unexpected parameter '" + got[i].name + "' for config");
    if (i >= got.size()) throw ShapeError("missing parameter '" + want[i].name + "'");
    if (want[i].name != got[i].name) {
      throw ShapeError("parameter '" + got[i].name + "' found where '" + want[i].name +
                       "' was expected");
    }
    if (want[i].tensor->shape() != got[i].tensor->shape()) {
      throw ShapeError("parameter '" + want[i].name + "' has shape " +
                       shape_to_string(got[i].tensor->shape()) + ", config implies " +
                       shape_to_string(want[i].tensor->shape()));
    }
  }
  if (params.fg.activations != expected.fg.activations ||
      params.fh.activations != expected.fh.activations ||
      params.head.activations != expected.head.activations) {
    throw ShapeError("activation layout does not match config");
  }
}

template <typename T>
int argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

template <typename T>
ForwardResult<T> forward(const ModelConfig& c, const ModelParams<T>& params,
                         std::span<const FeatureStreamPair<T>* const> batch, Phase phase,
                         Rng& rng) {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeError("forward: empty batch");
  if (phase == Phase::kTrain && n < 2) {
    throw ShapeError("forward: train phase needs a batch of at least 2 samples");
  }
  if (c.uses_stream1() != params.encoder1.has_value() ||
      c.uses_stream2() != params.encoder2.has_value()) {
    throw ShapeError("forward: parameters do not match stream mode " +
                     std::string(to_string(c.mode)));
  }
  const bool train = phase == Phase::kTrain;

  ForwardResult<T> r;
  ForwardCache<T>* cache = train ? &r.cache : nullptr;
  std::vector<int> labels(n);
  std::vector<const Tensor<T>*> in1, in2;
  for (std::size_t b = 0; b < n; ++b) {
    labels[b] = batch[b]->label;
    if (c.uses_stream1()) {
      check_stream(batch[b]->stream1, c.stream1, b, "stream1");
      in1.push_back(&batch[b]->stream1);
    }
    if (c.uses_stream2()) {
      check_stream(batch[b]->stream2, c.stream2, b, "stream2");
      in2.push_back(&batch[b]->stream2);
    }
  }

  // Independent dropout streams per encoder, drawn in a fixed order.
  Rng rng1(rng.next_u64());
  Rng rng2(rng.next_u64());
  std::vector<Tensor<T>> beta1, beta2;
  if (c.uses_stream1()) {
    beta1 = encoder_forward(*params.encoder1, c, in1, phase, rng1,
                            cache ? &cache->encoder1 : nullptr, r.encoder1_stats);
  }
  if (c.uses_stream2()) {
    beta2 = encoder_forward(*params.encoder2, c, in2, phase, rng2,
                            cache ? &cache->encoder2 : nullptr, r.encoder2_stats);
  }

  const RelationOptions rel_options{c.pair_block_rows};
  if (cache) {
    cache->relation.assign(n, RelationCache<T>{});
    cache->lstm.assign(n, LstmCache<T>{});
  }
  std::vector<Tensor<T>> last_hidden;
  last_hidden.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    RelationCache<T>* rc = cache ? &cache->relation[b] : nullptr;
    Tensor<T> gamma;
    switch (c.mode) {
      case StreamMode::kTwoStream:
        gamma = relation_forward(beta1[b], beta2[b], params.fg, params.fh, rel_options, rc);
        break;
      case StreamMode::kStream1Only:
        gamma = relation_forward_single(beta1[b], params.fg, params.fh, rel_options, rc);
        break;
      case StreamMode::kStream2Only:
        gamma = relation_forward_single(beta2[b], params.fg, params.fh, rel_options, rc);
        break;
    }
    const std::size_t g = gamma.dim(0);
    const Tensor<T> seq = c.gamma_sequence == GammaSequence::kSingleStep ? reshape(gamma, {1, g})
                                                                         : reshape(gamma, {g, 1});
    const Tensor<T> hidden = lstm_forward(seq, params.lstm, cache ? &cache->lstm[b] : nullptr);
    last_hidden.push_back(slice_rows(hidden, hidden.rows() - 1, 1));
  }

  const Tensor<T> embeddings = concat_rows<T>(last_hidden);
  r.logits = mlp_forward(params.head, embeddings, cache ? &cache->head : nullptr);
  SoftmaxXent<T> sx = softmax_xent(r.logits, labels);
  r.loss = sx.loss;
  const std::size_t k = r.logits.cols(), h = embeddings.cols();
  r.predictions.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    Prediction<T> p{slice_rows(sx.probs, b, 1), 0, slice_rows(embeddings, b, 1)};
    p.probs = reshape(p.probs, {k});
    p.embedding = reshape(p.embedding, {h});
    p.predicted_class = argmax<T>(p.probs.data());
    r.predictions.push_back(std::move(p));
  }
  if (cache) {
    cache->phase = phase;
    cache->labels = std::move(labels);
    cache->probs = std::move(sx.probs);
    cache->ready = true;
  }
  return r;
}

template <typename T>
ForwardResult<T> forward(const ModelConfig& config, const ModelParams<T>& params,
                         std::span<const FeatureStreamPair<T>> batch, Phase phase, Rng& rng) {
  std::vector<const FeatureStreamPair<T>*> refs;
  refs.reserve(batch.size());
  for (const auto& s : batch) refs.push_back(&s);
  return forward<T>(config, params, std::span<const FeatureStreamPair<T>* const>(refs), phase, rng);
}

template <typename T>
Gradients<T> backward_full(ForwardCache<T>& cache, const ModelConfig& c,
                           const ModelParams<T>& params) {
  if (!cache.ready) {
    throw CacheError(cache.phase == Phase::kInfer
                         ? "backward_full: infer-phase forward keeps no caches"
                         : "backward_full: cache was already consumed");
  }
  cache.ready = false;
  const std::size_t n = cache.labels.size();

  Gradients<T> g;
  g.params = zeros_like(params);

  const Tensor<T> dlogits = softmax_xent_backward(cache.probs, cache.labels);
  MlpGrads<T> head = mlp_backward(cache.head, params.head, dlogits);
  g.params.head.layers = std::move(head.layers);

  std::vector<Tensor<T>> dbeta1(n), dbeta2(n);
  for (std::size_t b = 0; b < n; ++b) {
    LstmCache<T>& lc = cache.lstm[b];
    const std::size_t steps = lc.hiddens.rows(), h = lc.hiddens.cols();
    Tensor<T> upstream({steps, h});
    for (std::size_t u = 0; u < h; ++u) upstream(steps - 1, u) = head.input(b, u);
    LstmGrads<T> lg = lstm_backward(lc, params.lstm, upstream);
    g.params.lstm.kernel = add(g.params.lstm.kernel, lg.kernel);
    g.params.lstm.recurrent_kernel = add(g.params.lstm.recurrent_kernel, lg.recurrent_kernel);
    g.params.lstm.bias = add(g.params.lstm.bias, lg.bias);

    const Tensor<T> dgamma = reshape(lg.input, {lg.input.size()});
    RelationGrads<T> rg = relation_backward(cache.relation[b], params.fg, params.fh, dgamma);
    add_into(g.params.fg.layers, rg.g);
    add_into(g.params.fh.layers, rg.h);
    switch (c.mode) {
      case StreamMode::kTwoStream:
        dbeta1[b] = std::move(rg.beta1);
        dbeta2[b] = std::move(rg.beta2);
        break;
      case StreamMode::kStream1Only:
        dbeta1[b] = std::move(rg.beta1);
        break;
      case StreamMode::kStream2Only:
        dbeta2[b] = std::move(rg.beta1);
        break;
    }
  }

  auto finish_encoder = [&](EncoderCache<T>& ec, const EncoderParams<T>& ep, EncoderParams<T>& out,
                            const std::vector<Tensor<T>>& dbeta, std::vector<Tensor<T>>& dinputs) {
    EncoderGrads<T> eg = encoder_backward(ec, ep, dbeta);
    out.kernel = std::move(eg.kernel);
    out.bias = std::move(eg.bias);
    out.bn.gamma = std::move(eg.gamma);
    out.bn.beta = std::move(eg.beta);
    dinputs = std::move(eg.inputs);
  };
  if (c.uses_stream1()) {
    finish_encoder(cache.encoder1, *params.encoder1, *g.params.encoder1, dbeta1, g.stream1);
  }
  if (c.uses_stream2()) {
    finish_encoder(cache.encoder2, *params.encoder2, *g.params.encoder2, dbeta2, g.stream2);
  }
  return g;
}

template <typename T>
void commit_running_stats(ModelParams<T>& params, const ForwardResult<T>& result) {
  if (result.encoder1_stats && params.encoder1) {
    params.encoder1->bn.running_mean = result.encoder1_stats->mean;
    params.encoder1->bn.running_var = result.encoder1_stats->var;
  }
  if (result.encoder2_stats && params.encoder2) {
    params.encoder2->bn.running_mean = result.encoder2_stats->mean;
    params.encoder2->bn.running_var = result.encoder2_stats->var;
  }
}

#define RELFUSE_INSTANTIATE(T)                                                                  \
  template std::vector<NamedTensor<T>> named_tensors(ModelParams<T>&);                          \
  template std::vector<ConstNamedTensor<T>> named_tensors(const ModelParams<T>&);               \
  template ModelParams<T> init_params(const ModelConfig&);                                      \
  template ModelParams<T> zeros_like(const ModelParams<T>&);                                    \
  template void check_params(const ModelConfig&, const ModelParams<T>&);                        \
  template int argmax(std::span<const T>);                                                      \
  template ForwardResult<T> forward(const ModelConfig&, const ModelParams<T>&,                  \
                                    std::span<const FeatureStreamPair<T>* const>, Phase, Rng&); \
  template ForwardResult<T> forward(const ModelConfig&, const ModelParams<T>&,                  \
                                    std::span<const FeatureStreamPair<T>>, Phase, Rng&);        \
  template Gradients<T> backward_full(ForwardCache<T>&, const ModelConfig&,                     \
                                      const ModelParams<T>&);                                   \
  template void commit_running_stats(ModelParams<T>&, const ForwardResult<T>&);

RELFUSE_INSTANTIATE(float)
RELFUSE_INSTANTIATE(double)

#undef RELFUSE_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace relfuse
