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

#include <cmath>
#include <filesystem>

#include <unistd.h>

#include "acid/calibration.hpp"
#include "acid/errors.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acid;
using namespace acid::testing;

namespace {

NullDistribution standard_normal() {
  NullDistribution d;
  d.location = 0.0;
  d.scale = 1.0;
  d.shape = 0.0;
  return d;
}

}  // namespace

TEST_SUITE("calibration") {

// The likelihood is nearly flat along a (location, shape) ridge when the
// true shape is 0, so the parameter-level tolerances below are not met for
// every seed. They stay visible; the distribution-level test is binding.
TEST_CASE("standard normal recovery: parameters" * doctest::may_fail()) {
  const auto fit = fit_skew_normal(skew_normal_draws(10000, 0.0, 1.0, 0.0, 1));
  CHECK(std::abs(fit.shape) < 0.3);
  CHECK(std::abs(fit.location) < 0.1);
  CHECK(std::abs(fit.scale - 1.0) < 0.1);
}

TEST_CASE("standard normal recovery: fitted law") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = skew_normal_draws(10000, 0.0, 1.0, 0.0, seed);
    const auto fit = fit_skew_normal(s);
    CHECK(fit.n_fit == 10000);
    CHECK(fit.diagnostics.ks_statistic < 0.02);
    // Mean and sd of the fitted law.
    const double delta = fit.shape / std::sqrt(1.0 + fit.shape * fit.shape);
    const double mean = fit.location + fit.scale * delta * std::sqrt(2.0 / M_PI);
    const double sd = fit.scale * std::sqrt(1.0 - 2.0 * delta * delta / M_PI);
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(sd - 1.0) < 0.05);
    // The fitted median is the standard-normal median.
    CHECK(std::abs(fit.cdf(0.0) - 0.5) < 0.02);
  }
}

TEST_CASE("skew-normal recovery") {
  const auto s = skew_normal_draws(10000, 0.0, 1.0, 5.0, 2);
  const auto fit = fit_skew_normal(s);
  CHECK(fit.shape >= 3.0);
  CHECK(fit.shape <= 8.0);
  CHECK(std::abs(fit.location) < 0.15);
  CHECK(std::abs(fit.scale - 1.0) < 0.1);
  CHECK(ks_statistic(s, fit) < 0.08);
}

TEST_CASE("negative skew is recovered with the right sign") {
  const auto fit = fit_skew_normal(skew_normal_draws(5000, 1.0, 2.0, -4.0, 3));
  CHECK(fit.shape < -2.0);
}

TEST_CASE("fits are equivariant under positive affine maps") {
  const auto s = skew_normal_draws(10000, 0.0, 1.0, 0.0, 4);
  const double a = 2.5, b = -3.0;
  std::vector<double> t(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = a * s[i] + b;
  const auto f = fit_skew_normal(s), g = fit_skew_normal(t);
  CHECK(std::abs(g.location - (a * f.location + b)) < a * 0.1);
  CHECK(std::abs(g.scale - a * f.scale) < a * 0.1);
  CHECK(std::abs(g.shape - f.shape) < 0.3);
}

TEST_CASE("degenerate and short samples are rejected") {
  std::vector<double> flat(200, 1.5);
  CHECK_THROWS_AS(fit_skew_normal(flat), DegenerateSampleError);
  const auto few = skew_normal_draws(99, 0.0, 1.0, 0.0, 5);
  CHECK_THROWS_AS(fit_skew_normal(few), ConfigError);
}

TEST_CASE("p-value examples") {
  const auto n = standard_normal();
  CHECK(p_value(0.0, n) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(p_value(1.6449, n) - 0.05) < 1e-3);
  CHECK(p_value(40.0, n) < 1e-100);
  CHECK(p_value(-40.0, n) == doctest::Approx(1.0));
  NullDistribution shifted = n;
  shifted.location = 2.0;
  shifted.scale = 3.0;
  CHECK(p_value(2.0, shifted) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS(p_value(std::nan(""), n));
}

TEST_CASE("p-values fall strictly as the logit rises") {
  NullDistribution d;
  d.location = -1.0;
  d.scale = 0.7;
  d.shape = 3.0;
  double prev = 1.0;
  for (double t = -4.0; t <= 6.0; t += 0.05) {
    const double p = p_value(t, d);
    // Within a few ulps of 1 the tail integral is below double resolution.
    if (prev < 1.0 - 1e-12) CHECK(p < prev);
    CHECK(p <= prev + 1e-15);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(rel_err(p + d.cdf(t), 1.0) < 1e-12);
    prev = p;
  }
  CHECK(d.cdf(-1e6) == 0.0);
  CHECK(d.cdf(1e6) == doctest::Approx(1.0));
}

TEST_CASE("log density integrates to one") {
  NullDistribution d;
  d.location = 0.5;
  d.scale = 1.3;
  d.shape = -2.0;
  double total = 0.0;
  const double h = 1e-3;
  for (double t = -15.0; t < 15.0; t += h) total += std::exp(d.log_pdf(t)) * h;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("decision boundary is strict") {
  CHECK(decide(0.01, 0.05) == Decision::Reject);
  CHECK(decide(0.05, 0.05) == Decision::FailToReject);
  CHECK(decide(0.99, 0.05) == Decision::FailToReject);
  CHECK_THROWS(decide(0.5, 0.0));
  CHECK_THROWS(decide(0.5, 1.0));
}

TEST_CASE("invalid null distributions are rejected") {
  NullDistribution d = standard_normal();
  d.scale = 0.0;
  CHECK_THROWS(d.validate());
}

TEST_CASE("null logits: count floor, determinism and finiteness") {
  ModelConfig c;
  c.e = 4;
  c.heads = 2;
  c.layers = 1;
  auto model = AcidModel<double>::initialize(c, 6);
  perturb(model.params(), 7);
  ConfigSpace space;
  space.n_values = {10};
  space.dz_values = {2};
  const SeedRange range{kCalibrationSeeds.begin, kCalibrationSeeds.begin + 100000};
  const auto a = collect_null_logits(model, space, 100, range), b = collect_null_logits(model, space, 100, range, 2);
  CHECK(a.size() == 100);
  CHECK(a == b);
  for (double z : a) CHECK(std::isfinite(z));
  CHECK_THROWS_AS(collect_null_logits(model, space, 99, range), ConfigError);
  for (const auto& ds : null_datasets(space, 100, range)) CHECK(*ds.label == 0);
  CHECK_THROWS_AS(collect_null_logits(model, space, 100, SeedRange{kTestSeeds.begin, kTestSeeds.begin + 1000}),
                  SeedGuardError);
}

TEST_CASE("calibration artifacts round-trip exactly") {
  CalibrationArtifact art;
  art.null = fit_skew_normal(skew_normal_draws(500, 0.3, 1.1, 2.0, 8));
  art.config_space.dz_values = {3, 5};
  art.config_space_fingerprint = art.config_space.fingerprint();
  art.checkpoint_fingerprint = "0123456789abcdef";
  art.seed_range = kCalibrationSeeds;
  const auto back = CalibrationArtifact::from_text(art.to_text());
  CHECK(back.null.location == art.null.location);
  CHECK(back.null.scale == art.null.scale);
  CHECK(back.null.shape == art.null.shape);
  CHECK(back.null.n_fit == art.null.n_fit);
  CHECK(back.null.diagnostics.ks_statistic == art.null.diagnostics.ks_statistic);
  CHECK(back.config_space_fingerprint == art.config_space_fingerprint);
  CHECK(back.checkpoint_fingerprint == art.checkpoint_fingerprint);
  CHECK(back.seed_range.begin == art.seed_range.begin);
  CHECK(back.to_text() == art.to_text());
  CHECK_THROWS(CalibrationArtifact::from_text("format_version = 99\n"));
}

}  // TEST_SUITE
