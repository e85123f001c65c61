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

#include <filesystem>
#include <set>

#include <unistd.h>

#include "acid/dataset.hpp"
#include "acid/errors.hpp"
#include "acid/evaluation.hpp"
#include "acid/synthgen.hpp"
#include "doctest.h"

using namespace acid;
namespace fs = std::filesystem;

namespace {

GenConfig config(DataModel m, std::uint64_t seed, std::size_t n = 200, std::size_t dz = 3) {
  GenConfig g;
  g.model = m;
  g.seed = seed;
  g.n = n;
  g.dz = dz;
  return g;
}

bool same(const Dataset& a, const Dataset& b) {
  return a.x == b.x && a.y == b.y && a.z == b.z && a.label == b.label && a.seed == b.seed &&
         a.model == b.model;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("acid_unit_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("labels follow the model") {
  for (int m = 1; m <= 6; ++m) {
    const auto model = static_cast<DataModel>(m);
    const Dataset ds = generate(config(model, 5));
    REQUIRE(ds.label.has_value());
    CHECK(*ds.label == (m >= 4 ? 1 : 0));
    CHECK(*ds.label == label_of(model));
  }
}

TEST_CASE("generation is a pure function of the config") {
  for (int m = 1; m <= 6; ++m) {
    const auto g = config(static_cast<DataModel>(m), 77);
    CHECK(same(generate(g), generate(g)));
    auto other = g;
    other.seed = 78;
    CHECK(generate(g).x != generate(other).x);
  }
}

TEST_CASE("every column is standardized") {
  for (int m = 1; m <= 6; ++m) {
    const Dataset ds = generate(config(static_cast<DataModel>(m), 9, 300, 4));
    for (const DataMatrix* mat : {&ds.x, &ds.y, &ds.z})
      for (Eigen::Index c = 0; c < mat->cols(); ++c) {
        const double mean = mat->col(c).mean();
        const double var = (mat->col(c).array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("shapes follow the config and values are finite") {
  auto g = config(DataModel::M6, 3, 17, 6);
  g.dx = 2;
  g.dy = 3;
  const Dataset ds = generate(g);
  CHECK(ds.n() == 17);
  CHECK(ds.dx() == 2);
  CHECK(ds.dy() == 3);
  CHECK(ds.dz() == 6);
  CHECK(ds.x.allFinite());
  CHECK(ds.y.allFinite());
  CHECK(ds.z.allFinite());
  CHECK_NOTHROW(ds.validate());
}

TEST_CASE("invalid configs are rejected") {
  auto g = config(DataModel::M1, 1);
  g.n = 0;
  CHECK_THROWS_AS(generate(g), ConfigError);
  g = config(DataModel::M1, 1);
  g.noise_scale = 0.0;
  CHECK_THROWS_AS(generate(g), ConfigError);
  g = config(DataModel::M1, 1);
  g.k = 0;
  CHECK_THROWS_AS(generate(g), ConfigError);
}

TEST_CASE("mechanisms are deterministic with nonzero output variance") {
  RngStream a(21), b(21);
  const Mechanism f = Mechanism::sample(3, 2, 16, a), g = Mechanism::sample(3, 2, 16, b);
  RngStream in(22);
  DataMatrix u(10000, 3);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = in.normal();
  const DataMatrix fu = f(u), gu = g(u);
  CHECK(fu == gu);
  CHECK(fu.allFinite());
  for (Eigen::Index c = 0; c < 2; ++c) {
    const double mean = fu.col(c).mean();
    CHECK((fu.col(c).array() - mean).square().mean() > 1e-3);
  }
}

TEST_CASE("streams are balanced, reproducible and honour reserved ranges") {
  ConfigSpace space;
  space.n_values = {20};
  space.dz_values = {2};
  DatasetStream s1(space, kTrainSeeds, 5, {kTestSeeds}), s2(space, kTrainSeeds, 5, {kTestSeeds});
  std::size_t h1 = 0;
  for (int i = 0; i < 1000; ++i) {
    const Dataset a = s1.next(), b = s2.next();
    CHECK(same(a, b));
    CHECK(kTrainSeeds.contains(a.seed));
    CHECK_FALSE(kTestSeeds.contains(a.seed));
    h1 += static_cast<std::size_t>(*a.label);
  }
  CHECK(std::abs(static_cast<double>(h1) / 1000.0 - 0.5) < 0.05);
  CHECK_THROWS_AS(DatasetStream(space, SeedRange{0, 1ull << 32}, 1, {kTestSeeds}), ConfigError);
  CHECK_THROWS_AS(DatasetStream(space, SeedRange{5, 5}, 1), ConfigError);
  CHECK_FALSE(kTrainSeeds.overlaps(kTestSeeds));
  CHECK_FALSE(kCalibrationSeeds.overlaps(kTestSeeds));
}

TEST_CASE("a stream batch shares one shape") {
  ConfigSpace space;
  space.n_values = {30, 60};
  space.dz_values = {2, 4};
  DatasetStream s(space, kTrainSeeds, 8);
  for (int rep = 0; rep < 5; ++rep) {
    const auto batch = s.next_batch(6);
    for (const auto& ds : batch) {
      CHECK(ds.n() == batch[0].n());
      CHECK(ds.dz() == batch[0].dz());
    }
  }
}

TEST_CASE("seek repositions a stream") {
  ConfigSpace space;
  space.n_values = {10};
  space.dz_values = {1};
  DatasetStream s(space, kTrainSeeds, 3);
  s.next();
  s.next();
  const auto pos = s.position();
  const Dataset third = s.next();
  DatasetStream t(space, kTrainSeeds, 3);
  t.seek(pos);
  CHECK(same(t.next(), third));
}

TEST_CASE("seed ranges parse and print") {
  const SeedRange r = SeedRange::parse("10:20");
  CHECK(r.begin == 10);
  CHECK(r.end == 20);
  CHECK(SeedRange::parse(r.str()).begin == 10);
  CHECK_THROWS(SeedRange::parse("20:10"));
  CHECK_THROWS(SeedRange::parse("abc"));
}

TEST_CASE("config space JSON round-trip keeps the fingerprint") {
  ConfigSpace space;
  space.dz_values = {3, 5};
  const ConfigSpace back = ConfigSpace::from_json(space.to_json());
  CHECK(back.fingerprint() == space.fingerprint());
  space.noise_scale = 0.5;
  CHECK(back.fingerprint() != space.fingerprint());
}

TEST_CASE("binary dataset files round-trip bit-exactly") {
  const Dataset ds = generate(config(DataModel::M4, 123, 40, 3));
  const fs::path p = temp_path("rt.bin");
  write_dataset_binary(ds, p);
  CHECK(same(read_dataset_binary(p), ds));
  CHECK(same(read_dataset(p), ds));
  fs::remove(p);
}

TEST_CASE("CSV files round-trip with their sidecar") {
  const Dataset ds = generate(config(DataModel::M2, 124, 25, 2));
  const fs::path p = temp_path("rt.csv");
  write_dataset_csv(ds, p);
  const Dataset back = read_dataset(p);
  CHECK(back.x == ds.x);
  CHECK(back.y == ds.y);
  CHECK(back.z == ds.z);
  CHECK(back.label == ds.label);
  fs::remove(p);
  fs::remove(fs::path(p.string() + ".meta.json"));
}

TEST_CASE("truncated binary files are rejected") {
  const Dataset ds = generate(config(DataModel::M1, 125, 20, 2));
  const fs::path p = temp_path("trunc.bin");
  write_dataset_binary(ds, p);
  fs::resize_file(p, fs::file_size(p) - 8);
  CHECK_THROWS_AS(read_dataset_binary(p), FormatError);
  fs::remove(p);
}

TEST_CASE("linear H0 models pass and linear M4 fails a partial-correlation test") {
  // 100 replicates at n = 10^4, dZ = 1, alpha = 0.01.
  auto rejection_rate = [](DataModel m) {
    std::size_t rejects = 0;
    for (std::uint64_t r = 0; r < 100; ++r) {
      GenConfig g = config(m, 1000 + r, 10000, 1);
      g.k = 1;
      g.linear = true;
      if (partial_correlation_test(generate(g)).p_value < 0.01) ++rejects;
    }
    return static_cast<double>(rejects) / 100.0;
  };
  CHECK(rejection_rate(DataModel::M1) <= 0.05);
  CHECK(rejection_rate(DataModel::M2) <= 0.05);
  CHECK(rejection_rate(DataModel::M3) <= 0.05);
  CHECK(rejection_rate(DataModel::M4) >= 0.95);
}

TEST_CASE("linear M1 partial correlation is near zero") {
  GenConfig g = config(DataModel::M1, 4242, 10000, 1);
  g.k = 1;
  g.linear = true;
  CHECK(std::abs(partial_correlation_test(generate(g)).r) < 0.05);
}

}  // TEST_SUITE
