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
#include <span>
#include <string>
#include <vector>

#include "acid/model.hpp"
#include "acid/synthgen.hpp"

namespace acid {

struct FitDiagnostics {
  double log_likelihood = 0.0;
  double ks_statistic = 0.0;
};

/// Skew-normal law with density (2/w) phi((t-xi)/w) Phi(a (t-xi)/w).
struct NullDistribution {
  double location = 0.0;  // xi
  double scale = 1.0;     // w > 0
  double shape = 0.0;     // a
  std::size_t n_fit = 0;
  FitDiagnostics diagnostics;

  void validate() const;
  double cdf(double t) const;
  /// 1 - cdf(t), evaluated without cancellation in the right tail.
  double survival(double t) const;
  double log_pdf(double t) const;
};

inline constexpr std::size_t kMinNullCount = 100;

/// Inference-mode logits of `count` fresh H0 datasets drawn from the H0
/// models of `space` with seeds from `range`.
template <typename T>
std::vector<double> collect_null_logits(const AcidModel<T>& model, const ConfigSpace& space,
                                        std::size_t count, SeedRange range, std::size_t threads = 1);

/// The H0 datasets collect_null_logits would score.
std::vector<Dataset> null_datasets(const ConfigSpace& space, std::size_t count, SeedRange range);

/// Maximum-likelihood fit by Nelder-Mead over (xi, log w, a), started from
/// the method of moments. Throws ConfigError below kMinNullCount samples and
/// DegenerateSampleError on zero variance.
NullDistribution fit_skew_normal(std::span<const double> samples);

/// Largest gap between the fitted CDF and the empirical CDF of `samples`.
double ks_statistic(std::span<const double> samples, const NullDistribution& null);

/// Right-tail probability of `logit` under the null.
double p_value(double logit, const NullDistribution& null);

enum class Decision { Reject, FailToReject };

/// Reject iff p < alpha.
Decision decide(double p, double alpha);
std::string to_string(Decision d);

struct CalibrationArtifact {
  static constexpr int kFormatVersion = 1;
  NullDistribution null;
  ConfigSpace config_space;
  std::string config_space_fingerprint;
  std::string checkpoint_fingerprint;
  SeedRange seed_range;

  /// key = value lines; doubles are written with round-trip precision.
  std::string to_text() const;
  static CalibrationArtifact from_text(const std::string& text);
  void save(const std::string& path) const;
  static CalibrationArtifact load(const std::string& path);
};

}  // namespace acid
