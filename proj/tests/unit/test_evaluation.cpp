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

#include <algorithm>
#include <cmath>

#include "acid/errors.hpp"
#include "acid/evaluation.hpp"
#include "acid/synthgen.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acid;
using namespace acid::testing;

namespace {

std::vector<DatasetResult> rows(std::size_t count, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<DatasetResult> out;
  for (std::size_t i = 0; i < count; ++i) {
    DatasetResult r;
    r.id = "ds" + std::to_string(i);
    r.seed = i;
    r.label = static_cast<int>(i % 2);
    r.logit = rng.normal() + (r.label ? 1.0 : 0.0);
    r.p_value = rng.uniform() * (r.label ? 0.2 : 1.0);
    r.reject = r.p_value < 0.05;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("auc examples") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auc(s, y) == 1.0);
  const std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  CHECK(auc(flat, y) == 0.5);
  const std::vector<double> rev{0.9, 0.8, 0.2, 0.1};
  CHECK(auc(rev, y) == 0.0);
}

TEST_CASE("auc matches pair counting and ignores monotone transforms") {
  RngStream rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> s(20);
    std::vector<int> y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      // Coarse rounding forces ties.
      s[i] = std::round(rng.normal() * 3.0) / 3.0;
      y[i] = static_cast<int>(i % 2 == 0 ? 1 : rng.below(2));
    }
    y[1] = 0;
    const double a = auc(s, y);
    CHECK(std::abs(a - auc_pairs(s, y)) < 1e-12);
    std::vector<double> e(s.size());
    std::transform(s.begin(), s.end(), e.begin(), [](double v) { return std::exp(v); });
    CHECK(auc(e, y) == a);
  }
}

TEST_CASE("auc needs both classes and matching lengths") {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> one{1, 1}, short_labels{1};
  CHECK_THROWS_AS(auc(s, one), UndefinedMetricError);
  CHECK_THROWS(auc(s, short_labels));
}

TEST_CASE("classification metric examples") {
  SUBCASE("perfect p-values") {
    const std::vector<double> p{0.0, 0.0, 1.0, 1.0};
    const std::vector<int> y{1, 1, 0, 0};
    const auto m = classification_metrics(p, y, 0.05);
    CHECK(*m.f1 == 1.0);
    CHECK(*m.type1 == 0.0);
    CHECK(*m.type2 == 0.0);
  }
  SUBCASE("TP=3 FP=1 FN=2") {
    const std::vector<double> p{0.01, 0.01, 0.01, 0.01, 0.5, 0.5, 0.5};
    const std::vector<int> y{1, 1, 1, 0, 1, 1, 0};
    const auto m = classification_metrics(p, y, 0.05);
    CHECK(m.tp == 3);
    CHECK(m.fp == 1);
    CHECK(m.fn == 2);
    CHECK(m.tn == 1);
    CHECK(*m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(*m.type1 == doctest::Approx(0.5));
    CHECK(*m.type2 == doctest::Approx(0.4));
  }
  SUBCASE("never reject") {
    const std::vector<double> p{1.0, 1.0, 1.0};
    const std::vector<int> y{1, 0, 1};
    const auto m = classification_metrics(p, y, 0.05);
    CHECK(*m.type1 == 0.0);
    CHECK(*m.type2 == 1.0);
    CHECK(*m.f1 == 0.0);
  }
  SUBCASE("a missing class leaves its metric undefined") {
    const std::vector<double> p{0.01, 0.5};
    const std::vector<int> y{1, 1};
    const auto m = classification_metrics(p, y, 0.05);
    CHECK_FALSE(m.type1.has_value());
    CHECK(m.type2.has_value());
    CHECK_THROWS_AS(require_metric(m.type1, "type1"), UndefinedMetricError);
  }
  SUBCASE("p equal to alpha is not a rejection") {
    const std::vector<double> p{0.05};
    const std::vector<int> y{1};
    CHECK(classification_metrics(p, y, 0.05).fn == 1);
  }
}

TEST_CASE("classification metrics ignore sample order") {
  auto r = rows(40, 2);
  std::vector<double> p;
  std::vector<int> y;
  for (const auto& x : r) {
    p.push_back(x.p_value);
    y.push_back(x.label);
  }
  const auto a = classification_metrics(p, y, 0.05);
  std::reverse(p.begin(), p.end());
  std::reverse(y.begin(), y.end());
  const auto b = classification_metrics(p, y, 0.05);
  CHECK(*a.f1 == *b.f1);
  CHECK(*a.type1 == *b.type1);
  CHECK(*a.type2 == *b.type2);
}

TEST_CASE("fold summaries") {
  const std::vector<double> same{0.7, 0.7, 0.7, 0.7, 0.7};
  const auto s = summarize_folds(same);
  CHECK(s.mean == doctest::Approx(0.7));
  CHECK(s.ci95_low == doctest::Approx(0.7));
  CHECK(s.ci95_high == doctest::Approx(0.7));
  const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5};
  const auto t = summarize_folds(v);
  const double sd = std::sqrt(0.025);
  CHECK(t.mean == doctest::Approx(0.3));
  CHECK(t.ci95_high - t.mean == doctest::Approx(1.96 * sd / std::sqrt(5.0)));
  const std::vector<double> edge{0.99, 1.0, 1.0, 0.9};
  const auto u = summarize_folds(edge);
  CHECK(u.ci95_high <= 1.0);
  CHECK(u.ci95_low <= u.mean);
}

TEST_CASE("folded evaluation") {
  const auto r = rows(200, 3);
  SUBCASE("needs at least two folds") { CHECK_THROWS_AS(evaluate_folds(r, 1, 0.05, 0), ConfigError); }
  SUBCASE("reproducible with a fixed fold seed and bounded metrics") {
    const auto a = evaluate_folds(r, 5, 0.05, 11), b = evaluate_folds(r, 5, 0.05, 11);
    CHECK(a.to_text() == b.to_text());
    CHECK(a.n_datasets == 200);
    CHECK(a.folds.size() == 5);
    for (const auto* m : {&a.auc, &a.f1, &a.type1, &a.type2}) {
      REQUIRE(m->has_value());
      CHECK((*m)->ci95_low <= (*m)->mean);
      CHECK((*m)->mean <= (*m)->ci95_high);
      CHECK((*m)->ci95_low >= 0.0);
      CHECK((*m)->ci95_high <= 1.0);
    }
    CHECK(a.to_text().find("alpha") != std::string::npos);
    CHECK(a.dataset_table().find("ds199") != std::string::npos);
  }
  SUBCASE("a different fold seed reassigns folds") {
    const auto a = evaluate_folds(r, 5, 0.05, 11), b = evaluate_folds(r, 5, 0.05, 12);
    CHECK(a.fold_table() != b.fold_table());
  }
  SUBCASE("a fold without one class skips that metric") {
    auto one_sided = r;
    for (std::size_t i = 0; i < one_sided.size(); ++i) one_sided[i].label = i < 195 ? 1 : 0;
    const auto rep = evaluate_folds(one_sided, 5, 0.05, 1);
    CHECK_FALSE(rep.warnings.empty());
    REQUIRE(rep.type2.has_value());
    CHECK(rep.type2->folds == 5);
  }
}

TEST_CASE("partial correlation examples") {
  SUBCASE("identical X and Y") {
    Dataset ds = generate(GenConfig{});
    ds.y = ds.x;
    const auto pc = partial_correlation_test(ds);
    CHECK(pc.r == doctest::Approx(1.0));
    CHECK(pc.p_value < 1e-12);
  }
  SUBCASE("exactly uncorrelated residuals") {
    Dataset ds;
    ds.x = DataMatrix(8, 1);
    ds.y = DataMatrix(8, 1);
    ds.z = DataMatrix(8, 1);
    ds.x << 1, -1, 1, -1, 1, -1, 1, -1;
    ds.y << 1, 1, -1, -1, 1, 1, -1, -1;
    ds.z << 1, 1, 1, 1, -1, -1, -1, -1;
    const auto pc = partial_correlation_test(ds);
    CHECK(std::abs(pc.r) < 1e-12);
    CHECK(pc.p_value == doctest::Approx(1.0));
  }
  SUBCASE("collinear Z is regularized") {
    Dataset ds = generate(GenConfig{});
    ds.z.col(1) = ds.z.col(0);
    CHECK(partial_correlation_test(ds).regularized);
  }
  SUBCASE("too few rows") {
    GenConfig g;
    g.n = 8;
    g.dz = 5;
    CHECK_THROWS(partial_correlation_test(generate(g)));
  }
}

TEST_CASE("linear M1 p-values are roughly uniform") {
  std::size_t rejects = 0;
  for (std::uint64_t r = 0; r < 200; ++r) {
    GenConfig g;
    g.model = DataModel::M1;
    g.n = 10000;
    g.dz = 1;
    g.k = 1;
    g.linear = true;
    g.seed = 5000 + r;
    if (partial_correlation_test(generate(g)).p_value < 0.05) ++rejects;
  }
  const double rate = static_cast<double>(rejects) / 200.0;
  CHECK(rate >= 0.02);
  CHECK(rate <= 0.09);
}

}  // TEST_SUITE
