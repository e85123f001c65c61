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

#include "acid/calibration.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <boost/math/distributions/skew_normal.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "acid/errors.hpp"

namespace acid {

namespace {

boost::math::skew_normal_distribution<double> as_boost(const NullDistribution& d) {
  return boost::math::skew_normal_distribution<double>(d.location, d.scale, d.shape);
}

// log Phi(x) that stays finite far into the left tail.
double log_norm_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  // Mills-ratio asymptote
  return -0.5 * x * x - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double skew_log_pdf(double t, double xi, double omega, double alpha) {
  const double u = (t - xi) / omega;
  return std::log(2.0 / omega) - 0.5 * u * u - 0.5 * std::log(2.0 * std::numbers::pi) +
         log_norm_cdf(alpha * u);
}

struct FitData {
  std::span<const double> samples;
};

double negative_log_likelihood(const gsl_vector* v, void* params) {
  const auto* data = static_cast<const FitData*>(params);
  const double xi = gsl_vector_get(v, 0);
  const double log_omega = gsl_vector_get(v, 1);
  const double alpha = gsl_vector_get(v, 2);
  if (!std::isfinite(log_omega) || std::abs(log_omega) > 50.0 || std::abs(alpha) > 1e3) {
    return GSL_POSINF;
  }
  const double omega = std::exp(log_omega);
  double ll = 0.0;
  for (double t : data->samples) ll += skew_log_pdf(t, xi, omega, alpha);
  return -ll / static_cast<double>(data->samples.size());
}

struct Start {
  double xi, log_omega, alpha;
};

// Method-of-moments initializer with the sample skewness clipped to the
// family's attainable range.
Start moment_start(double mean, double sd, double skew) {
  constexpr double kMaxSkew = 0.99;
  const double g = std::clamp(skew, -kMaxSkew, kMaxSkew);
  const double c = std::cbrt(g * g);
  const double k = std::cbrt(((4.0 - std::numbers::pi) / 2.0) * ((4.0 - std::numbers::pi) / 2.0));
  double delta = std::sqrt(std::numbers::pi / 2.0 * c / (c + k));
  if (g < 0) delta = -delta;
  const double alpha = delta / std::sqrt(1.0 - delta * delta);
  const double omega = sd / std::sqrt(1.0 - 2.0 * delta * delta / std::numbers::pi);
  const double xi = mean - omega * delta * std::sqrt(2.0 / std::numbers::pi);
  return {xi, std::log(omega), alpha};
}

std::pair<Start, double> simplex(const FitData& data, Start start, double sd) {
  gsl_multimin_function fn{&negative_log_likelihood, 3, const_cast<FitData*>(&data)};
  gsl_vector* x = gsl_vector_alloc(3);
  gsl_vector* step = gsl_vector_alloc(3);
  gsl_vector_set(x, 0, start.xi);
  gsl_vector_set(x, 1, start.log_omega);
  gsl_vector_set(x, 2, start.alpha);
  gsl_vector_set(step, 0, 0.5 * sd);
  gsl_vector_set(step, 1, 0.3);
  gsl_vector_set(step, 2, std::max(1.0, 0.5 * std::abs(start.alpha)));
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 3);
  gsl_multimin_fminimizer_set(s, &fn, x, step);
  for (int iter = 0; iter < 10000; ++iter) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-10) == GSL_SUCCESS) break;
  }
  const Start best{gsl_vector_get(s->x, 0), gsl_vector_get(s->x, 1), gsl_vector_get(s->x, 2)};
  const double value = s->fval;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return {best, value};
}

}  // namespace

void NullDistribution::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(location) || !std::isfinite(shape)) {
    throw ParameterError("null distribution needs finite location/shape and scale > 0");
  }
}

double NullDistribution::cdf(double t) const {
  if (t == std::numeric_limits<double>::infinity()) return 1.0;
  if (t == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::clamp(boost::math::cdf(as_boost(*this), t), 0.0, 1.0);
}

double NullDistribution::survival(double t) const {
  if (t == std::numeric_limits<double>::infinity()) return 0.0;
  if (t == -std::numeric_limits<double>::infinity()) return 1.0;
  return std::clamp(boost::math::cdf(boost::math::complement(as_boost(*this), t)), 0.0, 1.0);
}

double NullDistribution::log_pdf(double t) const { return skew_log_pdf(t, location, scale, shape); }

std::vector<Dataset> null_datasets(const ConfigSpace& space, std::size_t count, SeedRange range) {
  ConfigSpace h0 = space;
  h0.models.clear();
  for (auto m : space.models) {
    if (label_of(m) == 0) h0.models.push_back(m);
  }
  if (h0.models.empty()) throw ConfigError("config space has no H0 models to calibrate on");
  DatasetStream stream(h0, range, range.begin, {kTestSeeds});
  std::vector<Dataset> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(stream.next());
  return out;
}

template <typename T>
std::vector<double> collect_null_logits(const AcidModel<T>& model, const ConfigSpace& space,
                                        std::size_t count, SeedRange range, std::size_t threads) {
  if (count < kMinNullCount) {
    throw ConfigError("null count " + std::to_string(count) + " is below the floor of " +
                      std::to_string(kMinNullCount));
  }
  const std::vector<Dataset> data = null_datasets(space, count, range);
  return model.logits(data, threads);
}

template std::vector<double> collect_null_logits(const AcidModel<float>&, const ConfigSpace&,
                                                 std::size_t, SeedRange, std::size_t);
template std::vector<double> collect_null_logits(const AcidModel<double>&, const ConfigSpace&,
                                                 std::size_t, SeedRange, std::size_t);

NullDistribution fit_skew_normal(std::span<const double> samples) {
  if (samples.size() < kMinNullCount) {
    throw ConfigError("skew-normal fit needs at least " + std::to_string(kMinNullCount) +
                      " samples, got " + std::to_string(samples.size()));
  }
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) {
    if (!std::isfinite(v)) throw NumericError("skew-normal fit: non-finite sample");
    mean += v;
  }
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : samples) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (!(m2 > 0.0)) throw DegenerateSampleError("skew-normal fit: samples have zero variance");
  const double sd = std::sqrt(m2);
  const double skew = m3 / (m2 * sd);

  gsl_set_error_handler_off();
  const FitData data{samples};
  auto [best, value] = simplex(data, moment_start(mean, sd, skew), sd);
  // A restart from the optimum shakes the simplex out of premature collapse.
  auto [again, value2] = simplex(data, best, sd);
  if (value2 < value) {
    best = again;
    value = value2;
  }
  auto [symmetric, value3] = simplex(data, Start{mean, std::log(sd), 0.0}, sd);
  if (value3 < value) {
    best = symmetric;
    value = value3;
  }

  NullDistribution out;
  out.location = best.xi;
  out.scale = std::exp(best.log_omega);
  out.shape = best.alpha;
  out.n_fit = samples.size();
  out.validate();
  out.diagnostics.log_likelihood = -value * n;
  out.diagnostics.ks_statistic = ks_statistic(samples, out);
  return out;
}

double ks_statistic(std::span<const double> samples, const NullDistribution& null) {
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = null.cdf(sorted[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

double p_value(double logit, const NullDistribution& null) {
  if (std::isnan(logit)) throw NumericError("p_value of a NaN logit");
  return null.survival(logit);
}

Decision decide(double p, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  return p < alpha ? Decision::Reject : Decision::FailToReject;
}

std::string to_string(Decision d) { return d == Decision::Reject ? "reject" : "fail_to_reject"; }

// ----------------------------------------------------------------- artifact

namespace {

std::string exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw FormatError("calibration artifact: bad number for " + key + ": '" + text + "'");
  }
  return v;
}

}  // namespace

std::string CalibrationArtifact::to_text() const {
  std::ostringstream os;
  os << "format_version = " << kFormatVersion << "\n";
  os << "location = " << exact(null.location) << "\n";
  os << "scale = " << exact(null.scale) << "\n";
  os << "shape = " << exact(null.shape) << "\n";
  os << "n_fit = " << null.n_fit << "\n";
  os << "ks_statistic = " << exact(null.diagnostics.ks_statistic) << "\n";
  os << "log_likelihood = " << exact(null.diagnostics.log_likelihood) << "\n";
  os << "seed_range = " << seed_range.str() << "\n";
  os << "config_space_fingerprint = " << config_space_fingerprint << "\n";
  os << "checkpoint_fingerprint = " << checkpoint_fingerprint << "\n";
  os << "config_space = " << config_space.to_json().dump() << "\n";
  return os.str();
}

CalibrationArtifact CalibrationArtifact::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("calibration artifact: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("calibration artifact: missing key " + key);
    return it->second;
  };
  if (get("format_version") != std::to_string(kFormatVersion)) {
    throw FormatError("calibration artifact: unsupported format_version " + get("format_version"));
  }
  CalibrationArtifact a;
  a.null.location = parse_double("location", get("location"));
  a.null.scale = parse_double("scale", get("scale"));
  a.null.shape = parse_double("shape", get("shape"));
  a.null.n_fit = static_cast<std::size_t>(parse_double("n_fit", get("n_fit")));
  a.null.diagnostics.ks_statistic = parse_double("ks_statistic", get("ks_statistic"));
  a.null.diagnostics.log_likelihood = parse_double("log_likelihood", get("log_likelihood"));
  a.null.validate();
  a.seed_range = SeedRange::parse(get("seed_range"));
  a.config_space_fingerprint = get("config_space_fingerprint");
  a.checkpoint_fingerprint = get("checkpoint_fingerprint");
  try {
    a.config_space = ConfigSpace::from_json(nlohmann::json::parse(get("config_space")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("calibration artifact: bad config_space: ") + e.what());
  }
  return a;
}

void CalibrationArtifact::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << to_text();
  if (!out) throw FormatError("write failed for " + path);
}

CalibrationArtifact CalibrationArtifact::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

}  // namespace acid
