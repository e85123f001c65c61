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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acid/dataset.hpp"

namespace acid {

/// ROC AUC of `scores` against 0/1 `labels` via the Mann-Whitney rank
/// statistic; tied scores share their mean rank. Throws UndefinedMetricError
/// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct ClassificationMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  // Empty when the classes the metric needs are absent.
  std::optional<double> f1, type1, type2;
};

/// H1 is predicted iff p < alpha; H1 is the positive class.
ClassificationMetrics classification_metrics(std::span<const double> p_values,
                                             std::span<const int> labels, double alpha);

/// Returns the value or throws UndefinedMetricError naming the metric.
double require_metric(const std::optional<double>& value, const std::string& name);

struct MetricSummary {
  double mean = 0.0;
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  std::size_t folds = 0;  // folds that contributed
};

/// Mean and normal-approximation 95% interval (mean +- 1.96 sd / sqrt(k)),
/// clamped to [0, 1]. Needs at least one value; one value gives zero width.
MetricSummary summarize_folds(std::span<const double> values);

struct DatasetResult {
  std::string id;
  std::uint64_t seed = 0;
  int label = -1;
  double logit = 0.0;
  double p_value = 1.0;
  bool reject = false;
};

struct FoldResult {
  std::size_t fold = 0;
  std::size_t size = 0;
  std::optional<double> auc, f1, type1, type2;
};

struct EvalReport {
  std::optional<MetricSummary> auc, f1, type1, type2;
  std::size_t n_datasets = 0;
  std::size_t n_folds = 0;
  double alpha = 0.05;
  std::uint64_t fold_seed = 0;
  double ms_per_dataset = 0.0;
  std::vector<FoldResult> folds;
  std::vector<DatasetResult> datasets;
  std::vector<std::string> warnings;

  /// key = value lines.
  std::string to_text() const;
  /// Tab-separated per-dataset table with a header row.
  std::string dataset_table() const;
  std::string fold_table() const;
};

/// Shuffles `rows` into `n_folds` folds with `fold_seed`, computes every
/// metric within each fold and summarizes across folds. A fold lacking a
/// class needed by a metric skips that metric with a warning. Throws
/// ConfigError when n_folds < 2 or exceeds the row count, and ContractError
/// when a row is unlabeled.
EvalReport evaluate_folds(std::vector<DatasetResult> rows, std::size_t n_folds, double alpha,
                          std::uint64_t fold_seed);

struct PartialCorrelation {
  double r = 0.0;
  double statistic = 0.0;  // Fisher z scaled by sqrt(n - dZ - 3)
  double p_value = 1.0;    // two-sided
  bool regularized = false;
};

/// Linear-Gaussian conditional independence test of X and Y given Z from
/// regression residuals. Needs dX = dY = 1 and n > dZ + 3. A rank-deficient
/// Z design is solved with a small ridge and flagged.
PartialCorrelation partial_correlation_test(const Dataset& ds);

}  // namespace acid
