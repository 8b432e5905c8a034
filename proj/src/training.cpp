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

#include "relfuse/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "relfuse/errors.hpp"
#include "relfuse/layers.hpp"
#include "relfuse/rng.hpp"

namespace relfuse {

StepResult train_step(const ModelConfig& config, ModelParams<float>& params,
                      OptimizerState& state, const RmsPropOptions& options,
                      std::span<const Sample* const> batch, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {kDropoutTag, state.step});
  ForwardResult<float> fwd = forward<float>(config, params, batch, Phase::kTrain, rng);
  if (!std::isfinite(fwd.loss)) throw NumericError("non-finite loss");
  Gradients<float> grads = backward_full(fwd.cache, config, params);
  rmsprop_step(params, grads.params, state, options);
  commit_running_stats(params, fwd);
  return {static_cast<double>(fwd.loss), batch.size()};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  Rng rng = Rng::derive(seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)});
  const std::vector<std::size_t> order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Evaluation evaluate(const ModelConfig& config, const ModelParams<float>& params,
                    std::span<const Sample> samples, const std::vector<std::string>& class_names,
                    std::size_t batch_size, bool keep_embeddings) {
  if (samples.empty()) throw ShapeError("evaluate: empty sample set");
  if (batch_size == 0) batch_size = 1;
  const std::size_t n = samples.size();
  const std::size_t k = config.num_classes;
  Evaluation ev;
  ev.probs = TensorF({n, k});
  if (keep_embeddings) ev.embeddings = TensorF({n, config.lstm_hidden});
  Rng unused(0);
  double loss_sum = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    auto batch = samples.subspan(start, count);
    ForwardResult<float> r = forward<float>(config, params, batch, Phase::kInfer, unused);
    loss_sum += static_cast<double>(r.loss) * static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& p = r.predictions[i];
      ev.labels.push_back(batch[i].label);
      ev.predictions.push_back(p.predicted_class);
      for (std::size_t c = 0; c < k; ++c) ev.probs(start + i, c) = p.probs.data()[c];
      if (keep_embeddings)
        for (std::size_t h = 0; h < config.lstm_hidden; ++h)
          ev.embeddings(start + i, h) = p.embedding.data()[h];
    }
  }
  ev.loss = loss_sum / static_cast<double>(n);
  ev.confusion = confusion(ev.labels, ev.predictions, k, class_names);
  ev.metrics = compute_metrics(ev.confusion);
  return ev;
}

std::vector<nlohmann::json> log_records(const EpochRecord& r) {
  auto line = [&](const char* split, const char* metric, double value) {
    return nlohmann::json{{"epoch", r.epoch}, {"split", split}, {"metric", metric}, {"value", value}};
  };
  std::vector<nlohmann::json> out{line("train", "loss", r.train_loss),
                                  line("train", "accuracy", r.train_accuracy)};
  if (r.eval_loss) out.push_back(line("eval", "loss", *r.eval_loss));
  if (r.eval) {
    const MetricReport& m = *r.eval;
    out.push_back(line("eval", "accuracy", m.accuracy));
    out.push_back(line("eval", "precision", m.precision));
    out.push_back(line("eval", "recall", m.recall));
    out.push_back(line("eval", "f1", m.f1));
    out.push_back(line("eval", "mcc", m.mcc));
    out.push_back(line("eval", "specificity", m.specificity));
  }
  return out;
}

nlohmann::json to_json(const TrainReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_accuracy", e.train_accuracy}};
    if (e.eval_loss) j["eval_loss"] = *e.eval_loss;
    if (e.eval) j["eval"] = to_json(*e.eval);
    epochs.push_back(std::move(j));
  }
  nlohmann::json j{{"seed", report.seed},
                   {"wall_seconds", report.wall_seconds},
                   {"epochs", std::move(epochs)}};
  if (report.best_epoch) {
    j["best_epoch"] = *report.best_epoch;
    j["best_score"] = report.best_score;
  } else {
    j["best_epoch"] = nullptr;
  }
  return j;
}

namespace {

void check_samples(const ModelConfig& config, std::span<const Sample> samples, const char* what) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
      throw ConfigError(std::string(what) + " sample " + std::to_string(i) + " ('" +
                        samples[i].id + "') has label " + std::to_string(label) +
                        " outside [0, " + std::to_string(config.num_classes) + ")");
    }
  }
}

}  // namespace

TrainResult train(const RunConfig& config, std::span<const Sample> samples,
                  const TrainOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  config.model.validate();
  config.training.validate();
  if (samples.empty()) throw ConfigError("train: dataset is empty");
  check_samples(config.model, samples, "training");
  check_samples(config.model, options.eval, "eval");

  Checkpoint state;
  if (options.resume) {
    if (!(options.resume->model == config.model)) {
      throw ConfigError("train: resume checkpoint was written with a different model config");
    }
    state = *options.resume;
    state.training = config.training;
  } else {
    state.model = config.model;
    state.training = config.training;
    state.params = init_params<float>(config.model);
  }
  const RmsPropOptions opt = RmsPropOptions::from(config.training);
  const std::uint64_t seed = config.model.seed;

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "train_log.jsonl",
             options.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw FormatError(FormatError::Kind::kIo, "cannot open training log");
  }

  TrainResult result;
  result.report.seed = seed;
  result.best = state;
  const std::size_t first = state.epoch;
  const std::size_t last = first + config.training.epochs;
  for (std::size_t epoch = first; epoch < last; ++epoch) {
    const auto batches = epoch_batches(samples.size(), config.training.batch_size, seed, epoch);
    if (batches.empty()) throw ConfigError("train: dataset too small for a batch of two");
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Sample*> batch;
      batch.reserve(batches[b].size());
      for (std::size_t idx : batches[b]) batch.push_back(&samples[idx]);
      StepResult step;
      try {
        step = train_step(state.model, state.params, state.optimizer, opt, batch, seed);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) +
                           ": " + e.what());
      }
      loss_sum += step.loss * static_cast<double>(step.batch_size);
      seen += step.batch_size;
    }
    state.epoch = epoch + 1;

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy =
        evaluate(state.model, state.params, samples, options.class_names).metrics.accuracy;
    double score = rec.train_accuracy;
    if (!options.eval.empty()) {
      Evaluation ev = evaluate(state.model, state.params, options.eval, options.class_names);
      rec.eval = ev.metrics;
      rec.eval_loss = ev.loss;
      score = ev.metrics.accuracy;
    }
    if (!result.report.best_epoch || score > result.report.best_score) {
      result.report.best_epoch = rec.epoch;
      result.report.best_score = score;
      result.best = state;
    }
    if (log) {
      for (const auto& line : log_records(rec)) log << line.dump() << '\n';
      log.flush();
    }
    if (options.on_epoch) options.on_epoch(rec);
    result.report.epochs.push_back(std::move(rec));
  }
  result.final = state;
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!options.out_dir.empty()) {
    save_checkpoint(result.best, (options.out_dir / "best.rfck").string());
    save_checkpoint(result.final, (options.out_dir / "final.rfck").string());
    std::ofstream summary(options.out_dir / "train_summary.json");
    summary << to_json(result.report).dump(2) << '\n';
    if (!summary) throw FormatError(FormatError::Kind::kIo, "cannot write training summary");
  }
  return result;
}

}  // namespace relfuse
