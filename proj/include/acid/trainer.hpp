// Copyright 2026 The ACID Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acid/model.hpp"
#include "acid/synthgen.hpp"

namespace acid {

/// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels, in the
/// form max(l, 0) - l*G + log(1 + exp(-|l|)).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, std::span<const int> labels);

/// Same loss in double precision without a graph.
double bce_value(std::span<const double> logits, std::span<const int> labels);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;  // one per parameter, manifest order
  std::uint64_t t = 0;

  bool empty() const { return m.empty(); }
  /// Zero moments shaped like `params`, t = 0.
  static OptimizerState fresh(std::span<const Tensor<T>> params);
};

/// One bias-corrected Adam update of `w` with gradient `g`; `t` is the
/// 1-based step index. Arithmetic runs in double.
template <typename T>
void adam_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v,
                 std::uint64_t t, const AdamConfig& config);

/// Applies adam_update to every parameter using its accumulated gradient
/// (absent gradients count as zero) and advances state.t.
template <typename T>
void adam_step(std::span<Tensor<T>> params, OptimizerState<T>& state, const AdamConfig& config);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm);

struct TrainConfig {
  std::uint64_t steps = 1000;  // train() stops when the step counter reaches this
  std::size_t batch_size = 32;
  AdamConfig adam;
  double clip_norm = 5.0;
  ConfigSpace config_space;
  SeedRange seed_range = kTrainSeeds;
  std::uint64_t checkpoint_every = 0;  // 0: only at the end
  std::uint64_t telemetry_every = 1;
  std::uint64_t seed = 0;
  /// Upper bound on datasets * n * (dX + dY + dZ) per forward pass; larger
  /// batches are split and their gradients accumulated.
  std::size_t token_budget = 12000;
  std::size_t auc_window = 16;  // steps in the running AUC

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Everything needed to continue training bit-exactly.
template <typename T>
struct TrainState {
  AcidModel<T> model;
  OptimizerState<T> optimizer;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;             // data stream and dropout seed
  std::uint64_t stream_position = 0;  // datasets consumed from the stream

  static TrainState start(AcidModel<T> model, std::uint64_t seed) {
    return TrainState{std::move(model), {}, 0, seed, 0};
  }
};

struct TrainRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::optional<double> running_auc;
  std::optional<double> h0_logit_mean, h1_logit_mean;
  std::vector<std::size_t> h0_hist, h1_hist;  // counts per kLogitBins bin
  double grad_norm = 0.0;
  double wallclock_ms = 0.0;

  nlohmann::json to_json() const;
};

/// Histogram bin edges for logged logits; outer bins are open.
inline constexpr double kLogitBins[] = {-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0};

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;
  /// Called after every checkpoint_every steps and once at the end.
  std::function<void(std::uint64_t step)> on_checkpoint;
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::vector<double> logits;
  std::vector<int> labels;
};

/// Forward/backward over `batch` (split by token budget), clipping and one
/// Adam update. Throws NumericError, leaving parameters untouched, when the
/// loss is not finite.
template <typename T>
StepResult train_step(TrainState<T>& state, std::span<const Dataset> batch, const TrainConfig& config);

/// Runs steps drawn from the synthetic stream until state.step == config.steps.
/// A non-finite loss throws NumericError naming the step and batch seeds;
/// `state` then still holds the last good parameters.
template <typename T>
void train(TrainState<T>& state, const TrainConfig& config, const TrainHooks& hooks = {});

struct FinetuneConfig {
  TrainConfig train;  // train.steps counts fine-tuning steps
  std::size_t sample_rows = 50;
};

/// Continues training on row subsamples of labeled corpus datasets. Each
/// step draws one shape group and samples batch_size of its datasets with
/// replacement. Datasets shorter than sample_rows are sampled with
/// replacement after a warning. Throws ConfigError for unlabeled input.
template <typename T>
void finetune(TrainState<T>& state, std::span<const Dataset> corpus, const FinetuneConfig& config,
              const TrainHooks& hooks = {},
              const std::function<void(const std::string&)>& warn = {});

/// Inference-mode mean BCE of the model on labeled datasets.
template <typename T>
double probe_loss(const AcidModel<T>& model, std::span<const Dataset> datasets);

}  // namespace acid
