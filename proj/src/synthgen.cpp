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

#include "acid/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "acid/binary_io.hpp"
#include "acid/errors.hpp"

namespace acid {

int label_of(DataModel model) {
  switch (model) {
    case DataModel::M1:
    case DataModel::M2:
    case DataModel::M3:
      return 0;
    case DataModel::M4:
    case DataModel::M5:
    case DataModel::M6:
      return 1;
    case DataModel::Unknown:
      break;
  }
  throw ConfigError("data model has no ground-truth label");
}

// ---------------------------------------------------------------- mechanism

Mechanism::Mechanism(DataMatrix w1, Eigen::VectorXd b1, DataMatrix w2, Eigen::VectorXd b2,
                     Activation activation)
    : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)),
      activation_(activation) {
  if (b1_.size() != w1_.rows() || w2_.cols() != w1_.rows() || b2_.size() != w2_.rows()) {
    throw DimensionError("mechanism weights have inconsistent shapes");
  }
}

Mechanism Mechanism::sample(std::size_t in_dim, std::size_t out_dim, std::size_t k,
                            RngStream& rng, Activation activation) {
  if (in_dim < 1 || out_dim < 1 || k < 1) throw ConfigError("mechanism dims must be >= 1");
  const auto ki = static_cast<Eigen::Index>(k);
  DataMatrix w1(ki, static_cast<Eigen::Index>(in_dim));
  Eigen::VectorXd b1(ki);
  DataMatrix w2(static_cast<Eigen::Index>(out_dim), ki);
  Eigen::VectorXd b2(static_cast<Eigen::Index>(out_dim));
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b1.size(); ++i) b1[i] = rng.normal(0.0, 0.1);
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b2.size(); ++i) b2[i] = rng.normal(0.0, 0.1);
  return Mechanism(std::move(w1), std::move(b1), std::move(w2), std::move(b2), activation);
}

DataMatrix Mechanism::operator()(const DataMatrix& u) const {
  if (static_cast<std::size_t>(u.cols()) != in_dim()) {
    throw DimensionError("mechanism expects " + std::to_string(in_dim()) + " inputs, got " +
                         std::to_string(u.cols()));
  }
  DataMatrix hidden = (u * w1_.transpose()).rowwise() + b1_.transpose();
  if (activation_ == Activation::Tanh) hidden = hidden.array().tanh().matrix();
  DataMatrix out = (hidden * w2_.transpose()).rowwise() + b2_.transpose();
  return out;
}

// ---------------------------------------------------------------- generate

void GenConfig::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (dx < 1 || dy < 1 || dz < 1) throw ConfigError("dX, dY, dZ must be >= 1");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) {
    throw ConfigError("noise_scale must be positive");
  }
  if (model == DataModel::Unknown) throw ConfigError("a data model M1..M6 is required");
}

void standardize_columns(DataMatrix& m) {
  const double rows = static_cast<double>(m.rows());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    auto col = m.col(j);
    const double mu = col.sum() / rows;
    col.array() -= mu;
    const double var = col.squaredNorm() / rows;
    if (var > 0.0) col /= std::sqrt(var);
  }
}

namespace {

DataMatrix gaussian(std::size_t rows, std::size_t cols, double stddev, RngStream& rng) {
  DataMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

DataMatrix hstack(const DataMatrix& a, const DataMatrix& b) {
  DataMatrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

// Sub-stream keys; fixed so that adding a model never shifts another's draws.
enum StreamKey : std::uint64_t {
  kRootZ = 1, kRootX, kRootY, kLatent, kMechF = 10, kMechG, kMechH, kNoiseX = 20, kNoiseY, kNoiseZ
};

}  // namespace

Dataset generate(const GenConfig& config) {
  config.validate();
  const RngStream root(config.seed);
  auto sub = [&](StreamKey key) { return root.split(key); };
  const Activation act = config.linear ? Activation::Identity : Activation::Tanh;
  const std::size_t n = config.n, k = config.k;

  auto mechanism = [&](StreamKey key, std::size_t in, std::size_t out) {
    RngStream r = sub(key);
    return Mechanism::sample(in, out, k, r, act);
  };
  // standardized mechanism output plus N(0, noise^2) noise
  auto effect = [&](const DataMatrix& signal, StreamKey noise_key) {
    DataMatrix s = signal;
    standardize_columns(s);
    RngStream r = sub(noise_key);
    return DataMatrix(s + gaussian(n, static_cast<std::size_t>(s.cols()), config.noise_scale, r));
  };
  auto root_noise = [&](StreamKey key, std::size_t cols) {
    RngStream r = sub(key);
    return gaussian(n, cols, 1.0, r);
  };

  Dataset ds;
  switch (config.model) {
    case DataModel::M1: {
      ds.z = root_noise(kRootZ, config.dz);
      const Mechanism f = mechanism(kMechF, config.dz, config.dx);
      ds.x = effect(f(ds.z), kNoiseX);
      if (config.dx == config.dy) {
        ds.y = effect(f(ds.z), kNoiseY);
      } else {
        ds.y = effect(mechanism(kMechG, config.dz, config.dy)(ds.z), kNoiseY);
      }
      break;
    }
    case DataModel::M2: {
      ds.z = root_noise(kRootZ, config.dz);
      ds.x = effect(mechanism(kMechF, config.dz, config.dx)(ds.z), kNoiseX);
      ds.y = effect(mechanism(kMechG, config.dz, config.dy)(ds.z), kNoiseY);
      break;
    }
    case DataModel::M3: {
      ds.z = root_noise(kRootZ, config.dz);
      ds.x = effect(mechanism(kMechF, config.dx, config.dx)(root_noise(kRootX, config.dx)), kNoiseX);
      ds.y = effect(mechanism(kMechG, config.dy, config.dy)(root_noise(kRootY, config.dy)), kNoiseY);
      break;
    }
    case DataModel::M4: {
      ds.z = root_noise(kRootZ, config.dz);
      ds.x = effect(mechanism(kMechF, config.dz, config.dx)(ds.z), kNoiseX);
      DataMatrix from_z = mechanism(kMechG, config.dz, config.dy)(ds.z);
      DataMatrix from_x = mechanism(kMechH, config.dx, config.dy)(ds.x);
      standardize_columns(from_z);
      standardize_columns(from_x);
      ds.y = effect(from_z + from_x, kNoiseY);
      break;
    }
    case DataModel::M5: {
      ds.x = root_noise(kRootX, config.dx);
      ds.y = root_noise(kRootY, config.dy);
      ds.z = effect(mechanism(kMechF, config.dx + config.dy, config.dz)(hstack(ds.x, ds.y)), kNoiseZ);
      break;
    }
    case DataModel::M6: {
      ds.z = root_noise(kRootZ, config.dz);
      const DataMatrix zu = hstack(ds.z, root_noise(kLatent, 1));
      ds.x = effect(mechanism(kMechF, config.dz + 1, config.dx)(zu), kNoiseX);
      ds.y = effect(mechanism(kMechG, config.dz + 1, config.dy)(zu), kNoiseY);
      break;
    }
    case DataModel::Unknown:
      break;
  }
  standardize_columns(ds.x);
  standardize_columns(ds.y);
  standardize_columns(ds.z);
  ds.label = label_of(config.model);
  ds.seed = config.seed;
  ds.model = config.model;
  return ds;
}

// --------------------------------------------------------------- seed range

SeedRange SeedRange::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("seed range must look like lo:hi, got '" + text + "'");
  try {
    std::size_t used = 0;
    const std::string lo = text.substr(0, colon), hi = text.substr(colon + 1);
    SeedRange r{std::stoull(lo, &used), 0};
    if (used != lo.size()) throw std::invalid_argument(lo);
    r.end = std::stoull(hi, &used);
    if (used != hi.size()) throw std::invalid_argument(hi);
    if (r.end <= r.begin) throw ConfigError("seed range '" + text + "' is empty");
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("malformed seed range '" + text + "'");
  }
}

std::string SeedRange::str() const { return std::to_string(begin) + ":" + std::to_string(end); }

// ------------------------------------------------------------- config space

void ConfigSpace::validate() const {
  auto positive = [](const std::vector<std::size_t>& v, const char* name) {
    if (v.empty()) throw ConfigError(std::string(name) + " set is empty");
    for (auto x : v) {
      if (x < 1) throw ConfigError(std::string(name) + " values must be >= 1");
    }
  };
  positive(n_values, "n");
  positive(dz_values, "dZ");
  positive(k_values, "k");
  if (dx < 1 || dy < 1) throw ConfigError("dX and dY must be >= 1");
  if (models.empty()) throw ConfigError("config space has no data models");
  for (auto m : models) {
    if (m == DataModel::Unknown) throw ConfigError("config space contains an unknown model");
  }
  if (!(noise_scale > 0.0)) throw ConfigError("noise_scale must be positive");
}

nlohmann::json ConfigSpace::to_json() const {
  std::vector<std::string> names;
  for (auto m : models) names.push_back(to_string(m));
  return {{"n", n_values},   {"dZ", dz_values},     {"k", k_values},
          {"dX", dx},        {"dY", dy},            {"models", names},
          {"noise_scale", noise_scale}, {"linear", linear}};
}

ConfigSpace ConfigSpace::from_json(const nlohmann::json& j) {
  ConfigSpace s;
  try {
    if (j.contains("n")) s.n_values = j["n"].get<std::vector<std::size_t>>();
    if (j.contains("dZ")) s.dz_values = j["dZ"].get<std::vector<std::size_t>>();
    if (j.contains("k")) s.k_values = j["k"].get<std::vector<std::size_t>>();
    if (j.contains("dX")) s.dx = j["dX"].get<std::size_t>();
    if (j.contains("dY")) s.dy = j["dY"].get<std::size_t>();
    if (j.contains("models")) {
      s.models.clear();
      for (const auto& name : j["models"]) s.models.push_back(parse_data_model(name.get<std::string>()));
    }
    if (j.contains("noise_scale")) s.noise_scale = j["noise_scale"].get<double>();
    if (j.contains("linear")) s.linear = j["linear"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config space: ") + e.what());
  }
  s.validate();
  return s;
}

std::string ConfigSpace::fingerprint() const {
  const std::string canon = to_json().dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(io::fnv1a({canon.data(), canon.size()})));
  return buf;
}

// ------------------------------------------------------------------ stream

DatasetStream::DatasetStream(ConfigSpace space, SeedRange range, std::uint64_t stream_seed,
                             std::vector<SeedRange> reserved)
    : space_(std::move(space)), range_(range), stream_seed_(stream_seed) {
  space_.validate();
  if (range_.width() == 0) throw ConfigError("stream seed range " + range_.str() + " is empty");
  for (const auto& r : reserved) {
    if (range_.overlaps(r)) {
      throw SeedGuardError("stream seed range " + range_.str() + " overlaps reserved range " + r.str());
    }
  }
  for (auto m : space_.models) (label_of(m) == 0 ? h0_models_ : h1_models_).push_back(m);
}

DatasetStream::ShapeDraw DatasetStream::draw_shape(RngStream& rng) const {
  auto pick = [&](const std::vector<std::size_t>& v) { return v[rng.below(v.size())]; };
  ShapeDraw s{};
  s.n = pick(space_.n_values);
  s.dz = pick(space_.dz_values);
  s.k = pick(space_.k_values);
  return s;
}

Dataset DatasetStream::draw_dataset(RngStream& rng, const ShapeDraw& shape) const {
  const bool want_h1 = rng.uniform() < 0.5;
  const auto& pool = want_h1 ? (h1_models_.empty() ? h0_models_ : h1_models_)
                             : (h0_models_.empty() ? h1_models_ : h0_models_);
  GenConfig cfg;
  cfg.model = pool[rng.below(pool.size())];
  cfg.seed = range_.begin + rng.below(range_.width());
  if (!range_.contains(cfg.seed)) throw std::logic_error("dataset seed escaped its range");
  cfg.n = shape.n;
  cfg.dz = shape.dz;
  cfg.k = shape.k;
  cfg.dx = space_.dx;
  cfg.dy = space_.dy;
  cfg.noise_scale = space_.noise_scale;
  cfg.linear = space_.linear;
  return generate(cfg);
}

Dataset DatasetStream::next() {
  RngStream rng = RngStream(stream_seed_).split(position_++);
  const ShapeDraw shape = draw_shape(rng);
  return draw_dataset(rng, shape);
}

std::vector<Dataset> DatasetStream::next_batch(std::size_t size) {
  RngStream shape_rng = RngStream(stream_seed_).split(position_++);
  const ShapeDraw shape = draw_shape(shape_rng);
  std::vector<Dataset> batch;
  batch.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    RngStream rng = RngStream(stream_seed_).split(position_++);
    batch.push_back(draw_dataset(rng, shape));
  }
  return batch;
}

std::vector<Dataset> make_corpus(const ConfigSpace& space, std::size_t count, SeedRange range) {
  space.validate();
  if (range.width() < count) {
    throw ConfigError("seed range " + range.str() + " too small for " + std::to_string(count) +
                      " datasets");
  }
  std::vector<DataModel> h0, h1;
  for (auto m : space.models) (label_of(m) == 0 ? h0 : h1).push_back(m);
  // Single-class spaces fall back to their one pool.
  if (h0.empty()) h0 = h1;
  if (h1.empty()) h1 = h0;
  std::vector<Dataset> corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    GenConfig cfg;
    cfg.seed = range.begin + i;
    const auto& pool = (i % 2 == 0) ? h0 : h1;
    cfg.model = pool[(i / 2) % pool.size()];
    RngStream shape_rng = RngStream(cfg.seed).split(0x5A4Eull);
    auto pick = [&](const std::vector<std::size_t>& v) { return v[shape_rng.below(v.size())]; };
    cfg.n = pick(space.n_values);
    cfg.dz = pick(space.dz_values);
    cfg.k = pick(space.k_values);
    cfg.dx = space.dx;
    cfg.dy = space.dy;
    cfg.noise_scale = space.noise_scale;
    cfg.linear = space.linear;
    corpus.push_back(generate(cfg));
  }
  return corpus;
}

}  // namespace acid
