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

#ifndef RELFUSE_TRAINING_HPP_
#define RELFUSE_TRAINING_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relfuse/checkpoint.hpp"
#include "relfuse/config.hpp"
#include "relfuse/metrics.hpp"
#include "relfuse/model.hpp"
#include "relfuse/optimizer.hpp"

namespace relfuse {

using Sample = FeatureStreamPair<float>;

inline constexpr std::uint64_t kDropoutTag = 301;
inline constexpr std::uint64_t kShuffleTag = 302;

struct StepResult {
  double loss = 0;
  std::size_t batch_size = 0;
};

/// One forward/backward/RMSProp step. Dropout draws from
/// Rng::derive(seed, {kDropoutTag, state.step}), so a step depends only on
/// (params, state, batch, seed). Throws NumericError for a non-finite loss
/// or gradient, leaving params and state untouched.
StepResult train_step(const ModelConfig& config, ModelParams<float>& params,
                      OptimizerState& state, const RmsPropOptions& options,
                      std::span<const Sample* const> batch, std::uint64_t seed);

/// Batch order of one epoch: a permutation from Rng::derive(seed,
/// {kShuffleTag, epoch}) cut into batches of batch_size. A trailing batch
/// with fewer than two samples is dropped since BatchNorm needs two.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

struct Evaluation {
  std::vector<int> labels;
  std::vector<int> predictions;
  ConfusionMatrix confusion{2};
  MetricReport metrics;
  double loss = 0;  // mean cross-entropy
  TensorF embeddings;  // N x lstm_hidden, filled when requested
  TensorF probs;       // N x k
};

Evaluation evaluate(const ModelConfig& config, const ModelParams<float>& params,
                    std::span<const Sample> samples, const std::vector<std::string>& class_names = {},
                    std::size_t batch_size = 64, bool keep_embeddings = false);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;      // mean train-phase loss over the epoch's batches
  double train_accuracy = 0;  // infer-phase accuracy on the training set after the epoch
  std::optional<MetricReport> eval;
  std::optional<double> eval_loss;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;
  std::optional<std::size_t> best_epoch;
  double best_score = 0;  // eval accuracy, or train accuracy without an eval set
};

/// One JSON object per (epoch, split, metric) triple.
std::vector<nlohmann::json> log_records(const EpochRecord& record);
nlohmann::json to_json(const TrainReport& report);

struct TrainOptions {
  std::span<const Sample> eval;  // optional held-out set for best-checkpoint tracking
  std::optional<Checkpoint> resume;
  std::filesystem::path out_dir;  // empty: write nothing
  std::vector<std::string> class_names;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint final;
  Checkpoint best;
  TrainReport report;
};

/// Trains for config.training.epochs epochs (counted from the resumed epoch
/// when resuming). With out_dir set writes train_log.jsonl,
/// train_summary.json, best.rfck and final.rfck.
TrainResult train(const RunConfig& config, std::span<const Sample> samples,
                  const TrainOptions& options = {});

}  // namespace relfuse

#endif  // RELFUSE_TRAINING_HPP_
