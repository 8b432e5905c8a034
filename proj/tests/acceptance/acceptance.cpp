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

// Acceptance gate. Prints one PASS/FAIL line per criterion followed by the
// measured figures, and exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "relfuse/checkpoint.hpp"
#include "relfuse/errors.hpp"
#include "relfuse/gradcheck.hpp"
#include "relfuse/metrics.hpp"
#include "relfuse/relational.hpp"
#include "relfuse/synthetic.hpp"
#include "relfuse/tensor_io.hpp"
#include "relfuse/training.hpp"

namespace {

using namespace relfuse;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok    " : "FAILED") + "  " + what);
  }
  void info(const std::string& what) { details.push_back("info    " + what); }
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Tiny model (width 16, as configs/tiny.json) on the (8, 8) x (8, 8)
// synthetic streams with k = 4.
RunConfig tiny_run(std::uint64_t seed, std::size_t epochs) {
  RunConfig rc;
  rc.model.stream1 = {8, 8};
  rc.model.stream2 = {8, 8};
  rc.model.conv_filters = 16;
  rc.model.fg_hidden = {16, 16};
  rc.model.fg_out = 16;
  rc.model.fh_hidden = {16};
  rc.model.relation_dim = 16;
  rc.model.lstm_hidden = 16;
  rc.model.num_classes = 4;
  rc.model.fc_dims = {16, 16, 4};
  rc.model.seed = seed;
  rc.training.epochs = epochs;
  rc.training.batch_size = 8;
  return rc;
}

// ---------------------------------------------------------------------------

Outcome gradient_verification() {
  Outcome o;
  const auto t0 = Clock::now();
  const GradcheckReport r = run_gradcheck(GradcheckOptions{});
  const double secs = seconds_since(t0);
  double worst_layer = 0, worst_model = 0;
  for (const auto& c : r.components) {
    o.check(c.passed(), fmt("%-20s rel %.2e < %.0e%s", c.name.c_str(), c.max_rel_error, c.tolerance,
                            c.zero_gradient.empty()
                                ? ""
                                : fmt("  (%zu zero-gradient tensors, max |numeric| %.1e)",
                                      c.zero_gradient.size(), c.max_zero_numeric)
                                      .c_str()));
    (c.end_to_end ? worst_model : worst_layer) =
        std::max(c.end_to_end ? worst_model : worst_layer, c.max_rel_error);
  }
  o.info(fmt("worst layer %.2e, worst end-to-end %.2e, 5 seeds, f64", worst_layer, worst_model));
  o.check(secs < 120, fmt("runtime %.1f s < 120 s", secs));
  return o;
}

Tensor<float> permute_rows(const Tensor<float>& m, std::mt19937_64& gen) {
  std::vector<std::size_t> p(m.rows());
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), gen);
  Tensor<float> out(m.shape());
  for (std::size_t r = 0; r < p.size(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(p[r], c);
  return out;
}

template <typename T>
Tensor<T> canonical_rows(const Tensor<T>& m) {
  std::vector<std::vector<T>> rows(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    rows[r].assign(m.data().begin() + r * m.cols(), m.data().begin() + (r + 1) * m.cols());
  std::sort(rows.begin(), rows.end());
  Tensor<T> out(m.shape());
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].begin(), rows[r].end(), out.data().begin() + r * m.cols());
  return out;
}

Outcome relational_properties() {
  Outcome o;
  std::mt19937_64 gen(20260101);
  std::uniform_int_distribution<std::size_t> len(1, 16), width(1, 8);
  double worst_f32 = 0, worst_rel = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t f = width(gen);
    const auto b1 = oracle::random_tensor<float>({len(gen), f}, gen);
    const auto b2 = oracle::random_tensor<float>({len(gen), f}, gen);
    const auto g = oracle::random_mlp<float>(2 * f, {16, 12}, {Activation::kRelu, Activation::kRelu}, gen);
    const auto h = oracle::random_mlp<float>(12, {10, 6}, {Activation::kRelu, Activation::kNone}, gen);
    const auto a = relation_forward(b1, b2, g, h);
    const auto p1 = relation_forward(permute_rows(b1, gen), b2, g, h);
    const auto p2 = relation_forward(b1, permute_rows(b2, gen), g, h);
    const auto p12 = relation_forward(permute_rows(b1, gen), permute_rows(b2, gen), g, h);
    for (const auto* p : {&p1, &p2, &p12}) {
      worst_f32 = std::max<double>(worst_f32, max_abs_diff(a, *p));
      for (std::size_t c = 0; c < a.size(); ++c)
        worst_rel = std::max(worst_rel, std::abs(double(a[c]) - (*p)[c]) /
                                            std::max(1.0, std::abs(double(a[c]))));
    }
  }
  o.check(worst_f32 < 1e-6, fmt("f32 permutation invariance over 20 cases: max |diff| %.2e < 1e-6", worst_f32));

  std::size_t exact = 0, canon = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t f = width(gen);
    const auto b1 = oracle::random_tensor<double>({len(gen), f}, gen);
    const auto b2 = oracle::random_tensor<double>({len(gen), f}, gen);
    const auto g = oracle::random_mlp<double>(2 * f, {16, 12}, {Activation::kRelu, Activation::kRelu}, gen);
    const auto h = oracle::random_mlp<double>(12, {10, 6}, {Activation::kRelu, Activation::kNone}, gen);
    const auto naive = oracle::relation(b1, b2, g, h);
    for (std::size_t block : {1, 5, 64, 4096}) {
      ++total;
      const auto v = relation_forward(b1, b2, g, h, RelationOptions{block});
      exact += std::equal(naive.begin(), naive.end(), v.data().begin());
    }
    // Permuted inputs reduced to canonical row order sum in the same order.
    std::mt19937_64 pg(i);
    std::vector<std::size_t> p1(b1.rows());
    std::iota(p1.begin(), p1.end(), 0);
    std::shuffle(p1.begin(), p1.end(), pg);
    Tensor<double> b1p(b1.shape());
    for (std::size_t r = 0; r < p1.size(); ++r)
      for (std::size_t c = 0; c < f; ++c) b1p(r, c) = b1(p1[r], c);
    canon += relation_forward(canonical_rows(b1p), canonical_rows(b2), g, h) ==
             relation_forward(canonical_rows(b1), canonical_rows(b2), g, h);
  }
  o.check(exact == total, fmt("f64 blocked pair sum == naive double loop bitwise: %zu/%zu", exact, total));
  o.check(canon == 20, fmt("f64 canonical-order permutation invariance bitwise: %zu/20", canon));
  o.info(fmt("f32 worst relative difference %.2e", worst_rel));
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 gen(99);
  double worst = 0;
  std::size_t instances = 0;
  for (int k : {2, 4, 8}) {
    for (int i = 0; i < 100; ++i, ++instances) {
      const int n = std::uniform_int_distribution<int>(1, 300)(gen);
      std::uniform_int_distribution<int> cls(0, k - 1);
      std::bernoulli_distribution keep(std::uniform_real_distribution<double>(0, 1)(gen));
      std::vector<int> y(n), p(n);
      for (int s = 0; s < n; ++s) {
        y[s] = cls(gen);
        p[s] = keep(gen) ? y[s] : cls(gen);
      }
      const auto r = compute_metrics(confusion(y, p, k));
      const auto w = oracle::metrics_from_lists(y, p, k);
      for (auto [a, b] : {std::pair{r.accuracy, w.accuracy}, {r.precision, w.precision},
                          {r.recall, w.recall}, {r.f1, w.f1}, {r.mcc, w.mcc},
                          {r.specificity, w.specificity}})
        worst = std::max(worst, std::abs(a - b));
    }
  }
  o.check(worst <= 1e-12, fmt("%zu random instances, k in {2,4,8}: six metrics within %.1e <= 1e-12",
                              instances, worst));

  ConfusionMatrix b(2);
  b.add(0, 0, 45);
  b.add(0, 1, 5);
  b.add(1, 0, 10);
  b.add(1, 1, 40);
  const auto rb = compute_metrics(b);
  const double closed = (45.0 * 40 - 10.0 * 5) / std::sqrt(55.0 * 50 * 50 * 45);
  o.check(std::abs(rb.mcc - closed) <= 1e-12 && rb.accuracy == 0.85,
          fmt("binary [[45,5],[10,40]]: accuracy %.4f, MCC %.6f vs closed form %.6f", rb.accuracy,
              rb.mcc, closed));

  bool perfect = true;
  for (std::size_t k : {2, 4, 8}) {
    ConfusionMatrix cm(k);
    for (std::size_t c = 0; c < k; ++c) cm.add(c, c, 3 + c);
    const auto r = compute_metrics(cm);
    for (double v : {r.accuracy, r.precision, r.recall, r.f1, r.mcc, r.specificity})
      perfect = perfect && v == 1.0;
  }
  o.check(perfect, "perfect predictions give every metric = 1.0 for k in {2,4,8}");
  return o;
}

struct Split2 {
  std::vector<Sample> train, test;
};

Split2 split_corpus(const SyntheticCorpus& c) {
  Split2 s;
  for (std::size_t i = 0; i < c.splits.size(); ++i)
    (c.splits[i] == Split::kTrain ? s.train : s.test).push_back(c.dataset.samples[i]);
  return s;
}

Outcome two_stream_superiority() {
  Outcome o;
  const auto t0 = Clock::now();
  const StreamMode modes[] = {StreamMode::kTwoStream, StreamMode::kStream1Only,
                              StreamMode::kStream2Only};
  double mean[3] = {0, 0, 0};
  for (std::uint64_t seed : {1, 2, 3}) {
    SyntheticSpec spec;  // k = 4, 40 per class, 80/80 split
    spec.seed = seed;
    const SyntheticCorpus corpus = make_synthetic(spec);
    const Split2 s = split_corpus(corpus);
    std::string line = fmt("seed %llu (probes s1 %.3f s2 %.3f both %.3f):",
                           static_cast<unsigned long long>(seed), corpus.probe_stream1,
                           corpus.probe_stream2, corpus.probe_combined);
    for (int m = 0; m < 3; ++m) {
      RunConfig rc = tiny_run(seed, 100);
      rc.model.mode = modes[m];
      const TrainResult r = train(rc, s.train);
      const double acc = evaluate(rc.model, r.final.params, s.test).metrics.accuracy;
      mean[m] += acc / 3;
      line += fmt(" %s %.3f", std::string(to_string(modes[m])).c_str(), acc);
    }
    o.info(line);
  }
  const double secs = seconds_since(t0);
  o.check(mean[0] - mean[1] >= 0.10,
          fmt("two_stream %.3f vs stream1_only %.3f: +%.1f pp >= 10 pp", mean[0], mean[1],
              100 * (mean[0] - mean[1])));
  o.check(mean[0] - mean[2] >= 0.10,
          fmt("two_stream %.3f vs stream2_only %.3f: +%.1f pp >= 10 pp", mean[0], mean[2],
              100 * (mean[0] - mean[2])));
  o.check(secs < 900, fmt("runtime %.1f s < 900 s (100 epochs, 9 runs)", secs));
  return o;
}

double first_batch_loss(const RunConfig& rc, const ModelParams<float>& p,
                        const std::vector<Sample>& samples) {
  const auto batches = epoch_batches(samples.size(), rc.training.batch_size, rc.model.seed, 0);
  std::vector<const Sample*> batch;
  for (std::size_t i : batches.front()) batch.push_back(&samples[i]);
  Rng rng = Rng::derive(rc.model.seed, {kDropoutTag, 0});
  return forward<float>(rc.model, p, batch, Phase::kTrain, rng).loss;
}

Outcome overfit_capacity() {
  Outcome o;
  SyntheticSpec spec;  // 4 classes x 40 = 160 samples
  const SyntheticCorpus corpus = make_synthetic(spec);
  const auto& all = corpus.dataset.samples;
  for (std::uint64_t seed : {1, 2, 3}) {
    const RunConfig rc = tiny_run(seed, 30);
    std::size_t reached = 0;
    double best = 0;
    TrainOptions opts;
    opts.on_epoch = [&](const EpochRecord& e) {
      best = std::max(best, e.train_accuracy);
      if (!reached && e.train_accuracy >= 0.99) reached = e.epoch;
    };
    train(rc, all, opts);
    o.check(reached > 0, reached ? fmt("seed %llu: train accuracy >= 0.99 at epoch %zu of 30 (%zu samples)",
                                       static_cast<unsigned long long>(seed), reached, all.size())
                                 : fmt("seed %llu: best train accuracy %.4f in 30 epochs",
                                       static_cast<unsigned long long>(seed), best));
  }

  const double ln_k = std::log(4.0);
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const RunConfig rc = tiny_run(seed, 0);
    auto p = init_params<float>(rc.model);
    const double glorot = first_batch_loss(rc, p, all);
    auto& last = p.head.layers.back();
    last.weight = TensorF::zeros(last.weight.shape());
    last.bias = TensorF::zeros(last.bias.shape());
    const double uniform = first_batch_loss(rc, p, all);
    const double rel = std::abs(uniform - ln_k) / ln_k;
    o.check(rel < 0.01, fmt("seed %llu: uniform-logit init first-batch loss %.6f vs ln 4 = %.6f (%.2e rel)",
                            static_cast<unsigned long long>(seed), uniform, ln_k, rel));
    o.info(fmt("seed %llu: default Glorot init first-batch loss %.4f (%.1f%% from ln 4)",
               static_cast<unsigned long long>(seed), glorot, 100 * std::abs(glorot - ln_k) / ln_k));
  }
  return o;
}

Outcome determinism_and_persistence() {
  Outcome o;
  SyntheticSpec spec;
  spec.seed = 4;
  const Split2 s = split_corpus(make_synthetic(spec));

  oracle::TempDir a("acc_a"), b("acc_b");
  TrainOptions oa, ob;
  oa.out_dir = a.path();
  ob.out_dir = b.path();
  oa.eval = ob.eval = s.test;
  train(tiny_run(7, 5), s.train, oa);
  train(tiny_run(7, 5), s.train, ob);
  const std::string la = oracle::read_bytes(a / "train_log.jsonl");
  o.check(!la.empty() && la == oracle::read_bytes(b / "train_log.jsonl"),
          fmt("identical seeds: train_log.jsonl bitwise identical (%zu bytes)", la.size()));
  o.check(oracle::read_bytes(a / "final.rfck") == oracle::read_bytes(b / "final.rfck"),
          "identical seeds: final checkpoints bitwise identical");

  const std::string bytes = oracle::read_bytes(a / "final.rfck");
  const Checkpoint loaded = load_checkpoint((a / "final.rfck").string());
  save_checkpoint(loaded, (a / "again.rfck").string());
  o.check(oracle::read_bytes(a / "again.rfck") == bytes,
          fmt("checkpoint save -> load -> save bitwise exact (%zu bytes)", bytes.size()));

  // Step-for-step resume: run 3 epochs of steps, checkpoint to disk mid-epoch,
  // reload and continue; every later step loss and the end state must agree.
  const RunConfig rc = tiny_run(11, 0);
  const RmsPropOptions opt = RmsPropOptions::from(rc.training);
  std::vector<std::vector<const Sample*>> steps;
  for (std::size_t e = 0; e < 3; ++e)
    for (const auto& idx : epoch_batches(s.train.size(), rc.training.batch_size, rc.model.seed, e)) {
      steps.emplace_back();
      for (std::size_t i : idx) steps.back().push_back(&s.train[i]);
    }
  Checkpoint ref;
  ref.model = rc.model;
  ref.training = rc.training;
  ref.params = init_params<float>(rc.model);
  Checkpoint run = ref;
  std::vector<double> losses;
  for (const auto& batch : steps)
    losses.push_back(train_step(rc.model, run.params, run.optimizer, opt, batch, rc.model.seed).loss);

  const std::size_t cut = steps.size() / 2 + 1;
  Checkpoint part = ref;
  for (std::size_t i = 0; i < cut; ++i)
    train_step(rc.model, part.params, part.optimizer, opt, steps[i], rc.model.seed);
  save_checkpoint(part, (a / "mid.rfck").string());
  Checkpoint resumed = load_checkpoint((a / "mid.rfck").string());
  std::size_t same = 0;
  for (std::size_t i = cut; i < steps.size(); ++i)
    same += train_step(rc.model, resumed.params, resumed.optimizer, opt, steps[i], rc.model.seed).loss ==
            losses[i];
  o.check(same == steps.size() - cut && encode_checkpoint(resumed) == encode_checkpoint(run),
          fmt("resume from disk at step %zu: %zu/%zu later step losses bitwise equal, end state equal",
              cut, same, steps.size() - cut));

  // Epoch-level resume through train().
  oracle::TempDir c("acc_c");
  TrainOptions first;
  first.out_dir = c.path();
  train(tiny_run(7, 2), s.train, first);
  TrainOptions rest;
  rest.out_dir = c.path();
  rest.resume = load_checkpoint((c / "final.rfck").string());
  const TrainResult tail = train(tiny_run(7, 3), s.train, rest);
  Checkpoint full = load_checkpoint((a / "final.rfck").string());
  Checkpoint tail_final = tail.final;
  tail_final.training = full.training;
  const std::string full_plain_log = [&] {
    oracle::TempDir d("acc_d");
    TrainOptions od;
    od.out_dir = d.path();
    train(tiny_run(7, 5), s.train, od);
    return oracle::read_bytes(d / "train_log.jsonl");
  }();
  o.check(encode_checkpoint(tail_final) == encode_checkpoint(full) &&
              oracle::read_bytes(c / "train_log.jsonl") == full_plain_log,
          "train 2 epochs + resume 3 == 5 uninterrupted epochs (checkpoint and log bitwise)");
  return o;
}

Outcome file_format() {
  Outcome o;
  oracle::TempDir dir("acc_fts");
  std::mt19937_64 gen(14);
  const auto t = oracle::random_tensor<float>({14, 14, 1024}, gen);
  const std::string p1 = (dir / "a.fts").string(), p2 = (dir / "b.fts").string();
  write_tensor(p1, t);
  const TensorF back = read_tensor(p1);
  write_tensor(p2, back);
  const std::string bytes = oracle::read_bytes(p1);
  o.check(back == t && bytes == oracle::read_bytes(p2),
          "(14,14,1024) write -> read -> write bitwise exact");
  o.check(bytes.size() == 8 + 12 + 200704 * 4,
          fmt("file size %zu = 8 header + 12 dims + 200704 x 4 payload", bytes.size()));
  o.check(bytes.substr(0, 8) == std::string("FTS1\x03\0\0\0", 8) &&
              static_cast<unsigned char>(bytes[8]) == 14 && static_cast<unsigned char>(bytes[17]) == 4,
          "header bytes: magic, rank 3, zero reserved, little-endian dims");

  using K = FormatError::Kind;
  const std::string good = encode_tensor(TensorF({2, 2}, {1, 2, 3, 4}));
  auto kind_of = [](const std::string& b) -> std::string {
    try {
      decode_tensor(b);
      return "accepted";
    } catch (const FormatError& e) {
      switch (e.kind()) {
        case K::kBadMagic: return "bad_magic";
        case K::kTruncated: return "truncated";
        case K::kDimOverflow: return "dim_overflow";
        case K::kNonFinite: return "non_finite";
        case K::kCorrupt: return "corrupt";
        default: return "other";
      }
    } catch (...) {
      return "unexpected exception";
    }
  };
  std::string magic = good;
  magic.replace(0, 4, "XXXX");
  std::string overflow = std::string("FTS1\x03\0\0\0", 8) + std::string(12, '\xff');
  std::string nonfinite = good;
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(nonfinite.data() + 16, &inf, 4);
  std::string reserved = good;
  reserved[5] = 7;
  const std::pair<const char*, std::pair<std::string, std::string>> cases[] = {
      {"magic XXXX", {magic, "bad_magic"}},
      {"payload cut short", {good.substr(0, good.size() - 3), "truncated"}},
      {"header cut short", {good.substr(0, 6), "truncated"}},
      {"dims overflow", {overflow, "dim_overflow"}},
      {"Inf in payload", {nonfinite, "non_finite"}},
      {"reserved byte set", {reserved, "corrupt"}},
  };
  for (const auto& [what, c] : cases) {
    const std::string got = kind_of(c.first);
    o.check(got == c.second, fmt("%s -> %s (expected %s)", what, got.c_str(), c.second.c_str()));
  }
  o.info("all criteria above run against the C++ library alone; no exporter is built or invoked");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"gradient-verification", gradient_verification},
      {"relational-network-properties", relational_properties},
      {"metric-oracle-equivalence", metric_oracle},
      {"two-stream-superiority", two_stream_superiority},
      {"overfit-capacity", overfit_capacity},
      {"determinism-and-persistence", determinism_and_persistence},
      {"file-format-conformance", file_format},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name, seconds_since(t0));
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria));
  return failed == 0 ? 0 : 1;
}
