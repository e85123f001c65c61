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
#include <json.hpp>
#include <string>
#include <vector>

#include "acid/dataset.hpp"
#include "acid/rng.hpp"

namespace acid {

/// Ground-truth label implied by a data model: 0 for M1-M3, 1 for M4-M6.
int label_of(DataModel model);

enum class Activation { Tanh, Identity };

/// One-hidden-layer perceptron u -> W2 * act(W1 u + b1) + b2 used as a causal
/// mechanism. Hidden width k sets how non-linear the map can be.
class Mechanism {
 public:
  Mechanism(DataMatrix w1, Eigen::VectorXd b1, DataMatrix w2, Eigen::VectorXd b2,
            Activation activation = Activation::Tanh);

  /// Weights i.i.d. N(0, 1), biases N(0, 0.1^2).
  static Mechanism sample(std::size_t in_dim, std::size_t out_dim, std::size_t k, RngStream& rng,
                          Activation activation = Activation::Tanh);

  /// Applies the map to every row of `u` (rows are samples).
  DataMatrix operator()(const DataMatrix& u) const;

  std::size_t in_dim() const { return static_cast<std::size_t>(w1_.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(w2_.rows()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1_.rows()); }

 private:
  DataMatrix w1_;  // k x in
  Eigen::VectorXd b1_;
  DataMatrix w2_;  // out x k
  Eigen::VectorXd b2_;
  Activation activation_;
};

struct GenConfig {
  std::size_t n = 200;
  std::size_t dx = 1, dy = 1, dz = 5;
  std::size_t k = 16;
  double noise_scale = 0.3;
  std::uint64_t seed = 0;
  DataModel model = DataModel::M1;
  /// Replace tanh by the identity in every mechanism (linear-Gaussian oracle variant).
  bool linear = false;

  void validate() const;
};

/// Draws one labelled dataset from the chosen structural model. Every column
/// of the result is standardized to zero mean and unit population variance.
Dataset generate(const GenConfig& config);

/// Column-wise standardization in place (population variance). Constant
/// columns are centred only.
void standardize_columns(DataMatrix& m);

/// Half-open seed interval [begin, end).
struct SeedRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t width() const { return end - begin; }
  bool contains(std::uint64_t seed) const { return seed >= begin && seed < end; }
  bool overlaps(const SeedRange& other) const {
    return begin < other.end && other.begin < end;
  }
  /// Parses "lo:hi".
  static SeedRange parse(const std::string& text);
  std::string str() const;
};

/// Default split: training seeds [0, 2^31), held-out seeds [2^31, 2^32).
inline constexpr SeedRange kTrainSeeds{0, 1ull << 31};
inline constexpr SeedRange kTestSeeds{1ull << 31, 1ull << 32};
/// Null-calibration draws come from the training half.
inline constexpr SeedRange kCalibrationSeeds{1ull << 30, 1ull << 31};

/// Sets from which each dataset's size, dimensionality and mechanism width
/// are sampled.
struct ConfigSpace {
  std::vector<std::size_t> n_values{50, 200};
  std::vector<std::size_t> dz_values{5, 10, 20};
  std::vector<std::size_t> k_values{16};
  std::size_t dx = 1, dy = 1;
  std::vector<DataModel> models{DataModel::M1, DataModel::M2, DataModel::M3,
                                DataModel::M4, DataModel::M5, DataModel::M6};
  double noise_scale = 0.3;
  bool linear = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ConfigSpace from_json(const nlohmann::json& j);
  /// Stable hex digest of the canonical JSON form.
  std::string fingerprint() const;
};

/// Infinite source of fresh labelled datasets. Draw i depends only on
/// (stream_seed, i), and every dataset seed falls in `range`.
class DatasetStream {
 public:
  /// Throws ConfigError when `range` is empty or overlaps any of `reserved`.
  DatasetStream(ConfigSpace space, SeedRange range, std::uint64_t stream_seed,
                std::vector<SeedRange> reserved = {});

  /// One dataset with its own shape draw; label is H1 with probability 1/2.
  Dataset next();

  /// `size` datasets sharing one (n, dZ, k) draw; models drawn per dataset.
  std::vector<Dataset> next_batch(std::size_t size);

  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }
  const SeedRange& range() const { return range_; }
  const ConfigSpace& space() const { return space_; }
  std::uint64_t stream_seed() const { return stream_seed_; }

 private:
  struct ShapeDraw {
    std::size_t n, dz, k;
  };
  ShapeDraw draw_shape(RngStream& rng) const;
  Dataset draw_dataset(RngStream& rng, const ShapeDraw& shape) const;

  ConfigSpace space_;
  SeedRange range_;
  std::uint64_t stream_seed_;
  std::uint64_t position_ = 0;
  std::vector<DataModel> h0_models_, h1_models_;
};

/// Balanced corpus: dataset i uses seed range.begin + i, alternates between
/// the H0 and H1 models of `space` and draws its shape from `space`.
/// Throws ConfigError if the range is too small.
std::vector<Dataset> make_corpus(const ConfigSpace& space, std::size_t count, SeedRange range);

}  // namespace acid
