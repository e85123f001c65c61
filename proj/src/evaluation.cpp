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

#include "acid/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "acid/errors.hpp"
#include "acid/rng.hpp"

namespace acid {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) {
        pos_rank_sum += mid;
        ++pos;
      } else if (labels[order[t]] != 0) {
        throw ContractError("auc: labels must be 0 or 1");
      }
    }
    i = j + 1;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc needs both classes");
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

ClassificationMetrics classification_metrics(std::span<const double> p_values,
                                             std::span<const int> labels, double alpha) {
  if (p_values.size() != labels.size()) {
    throw DimensionError("classification_metrics: " + std::to_string(p_values.size()) +
                         " p-values vs " + std::to_string(labels.size()) + " labels");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool reject = p_values[i] < alpha;
    if (labels[i] == 1) {
      (reject ? m.tp : m.fn)++;
    } else if (labels[i] == 0) {
      (reject ? m.fp : m.tn)++;
    } else {
      throw ContractError("classification_metrics: labels must be 0 or 1");
    }
  }
  const auto ratio = [](std::size_t a, std::size_t b) { return static_cast<double>(a) / static_cast<double>(b); };
  if (m.fp + m.tn > 0) m.type1 = ratio(m.fp, m.fp + m.tn);
  if (m.tp + m.fn > 0) m.type2 = ratio(m.fn, m.tp + m.fn);
  const std::size_t denom = 2 * m.tp + m.fp + m.fn;
  if (denom > 0) m.f1 = ratio(2 * m.tp, denom);
  return m;
}

double require_metric(const std::optional<double>& value, const std::string& name) {
  if (!value) throw UndefinedMetricError(name + " is undefined for this label mix");
  return *value;
}

MetricSummary summarize_folds(std::span<const double> values) {
  if (values.empty()) throw ContractError("summarize_folds needs at least one value");
  MetricSummary s;
  s.folds = values.size();
  const double k = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double half = 0.0;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    half = 1.96 * std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
  }
  s.ci95_low = std::clamp(s.mean - half, 0.0, 1.0);
  s.ci95_high = std::clamp(s.mean + half, 0.0, 1.0);
  return s;
}

EvalReport evaluate_folds(std::vector<DatasetResult> rows, std::size_t n_folds, double alpha,
                          std::uint64_t fold_seed) {
  if (n_folds < 2) throw ConfigError("evaluation needs at least 2 folds");
  if (rows.size() < n_folds) {
    throw ConfigError(std::to_string(rows.size()) + " datasets cannot fill " +
                      std::to_string(n_folds) + " folds");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  for (const auto& r : rows) {
    if (r.label != 0 && r.label != 1) throw ContractError("dataset " + r.id + " has no label");
  }
  EvalReport report;
  report.n_datasets = rows.size();
  report.n_folds = n_folds;
  report.alpha = alpha;
  report.fold_seed = fold_seed;

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(fold_seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<double> aucs, f1s, t1s, t2s;
  for (std::size_t f = 0; f < n_folds; ++f) {
    const std::size_t lo = f * rows.size() / n_folds, hi = (f + 1) * rows.size() / n_folds;
    std::vector<double> logits, ps;
    std::vector<int> labels;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& r = rows[order[i]];
      logits.push_back(r.logit);
      ps.push_back(r.p_value);
      labels.push_back(r.label);
    }
    FoldResult fr;
    fr.fold = f;
    fr.size = hi - lo;
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                      std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) fr.auc = auc(logits, labels);
    const ClassificationMetrics cm = classification_metrics(ps, labels, alpha);
    fr.f1 = cm.f1;
    fr.type1 = cm.type1;
    fr.type2 = cm.type2;
    auto keep = [&](const std::optional<double>& v, std::vector<double>& into, const char* name) {
      if (v) {
        into.push_back(*v);
      } else {
        report.warnings.push_back("fold " + std::to_string(f) + ": " + name + " skipped, class missing");
      }
    };
    keep(fr.auc, aucs, "auc");
    keep(fr.f1, f1s, "f1");
    keep(fr.type1, t1s, "type1");
    keep(fr.type2, t2s, "type2");
    report.folds.push_back(fr);
  }
  auto summary = [](const std::vector<double>& v) -> std::optional<MetricSummary> {
    if (v.empty()) return std::nullopt;
    return summarize_folds(v);
  };
  report.auc = summary(aucs);
  report.f1 = summary(f1s);
  report.type1 = summary(t1s);
  report.type2 = summary(t2s);
  report.datasets = std::move(rows);
  return report;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "undefined"; }

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "format_version = 1\n";
  os << "alpha = " << num(alpha) << "\n";
  os << "n_datasets = " << n_datasets << "\n";
  os << "n_folds = " << n_folds << "\n";
  os << "fold_seed = " << fold_seed << "\n";
  os << "ci_method = normal approximation over folds\n";
  os << "ms_per_dataset = " << num(ms_per_dataset) << "\n";
  auto metric = [&](const char* name, const std::optional<MetricSummary>& m) {
    if (!m) {
      os << name << " = undefined\n";
      return;
    }
    os << name << " = " << num(m->mean) << "\n";
    os << name << "_ci95_low = " << num(m->ci95_low) << "\n";
    os << name << "_ci95_high = " << num(m->ci95_high) << "\n";
    os << name << "_folds = " << m->folds << "\n";
  };
  metric("auc", auc);
  metric("f1", f1);
  metric("type1", type1);
  metric("type2", type2);
  for (const auto& w : warnings) os << "warning = " << w << "\n";
  return os.str();
}

std::string EvalReport::dataset_table() const {
  std::ostringstream os;
  os << "id\tseed\tlabel\tlogit\tp_value\tdecision\n";
  for (const auto& r : datasets) {
    os << r.id << '\t' << r.seed << '\t' << r.label << '\t' << num(r.logit) << '\t'
       << num(r.p_value) << '\t' << (r.reject ? "reject" : "fail_to_reject") << '\n';
  }
  return os.str();
}

std::string EvalReport::fold_table() const {
  std::ostringstream os;
  os << "fold\tsize\tauc\tf1\ttype1\ttype2\n";
  for (const auto& f : folds) {
    os << f.fold << '\t' << f.size << '\t' << opt_num(f.auc) << '\t' << opt_num(f.f1) << '\t'
       << opt_num(f.type1) << '\t' << opt_num(f.type2) << '\n';
  }
  return os.str();
}

PartialCorrelation partial_correlation_test(const Dataset& ds) {
  ds.validate();
  if (ds.dx() != 1 || ds.dy() != 1) {
    throw DimensionError("partial correlation needs dX = dY = 1, got dX=" + std::to_string(ds.dx()) +
                         " dY=" + std::to_string(ds.dy()));
  }
  const auto n = static_cast<Eigen::Index>(ds.n());
  const auto dz = static_cast<Eigen::Index>(ds.dz());
  if (n <= dz + 3) {
    throw DimensionError("partial correlation needs n > dZ + 3, got n=" + std::to_string(n) +
                         " dZ=" + std::to_string(dz));
  }
  Eigen::MatrixXd design(n, dz + 1);
  design.col(0).setOnes();
  if (dz > 0) design.rightCols(dz) = ds.z;
  Eigen::MatrixXd targets(n, 2);
  targets.col(0) = ds.x.col(0);
  targets.col(1) = ds.y.col(0);

  PartialCorrelation out;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  Eigen::MatrixXd beta;
  if (qr.rank() < design.cols()) {
    out.regularized = true;
    Eigen::MatrixXd gram = design.transpose() * design;
    const double ridge = 1e-8 * std::max(1.0, gram.trace());
    gram.diagonal().array() += ridge;
    beta = gram.ldlt().solve(design.transpose() * targets);
  } else {
    beta = qr.solve(targets);
  }
  const Eigen::MatrixXd resid = targets - design * beta;
  const double sxx = resid.col(0).squaredNorm(), syy = resid.col(1).squaredNorm();
  const double sxy = resid.col(0).dot(resid.col(1));
  if (sxx <= 0.0 || syy <= 0.0) {
    throw DegenerateSampleError("partial correlation: a residual has zero variance");
  }
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double z = std::atanh(out.r) * std::sqrt(static_cast<double>(n - dz - 3));
  out.statistic = z;
  out.p_value = std::isinf(z) ? 0.0 : std::erfc(std::abs(z) / std::sqrt(2.0));
  return out;
}

}  // namespace acid
