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

#include "acid/checkpoint.hpp"
#include "acid/errors.hpp"
#include "acid/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acid;
using namespace acid::testing;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.e = 4;
  c.heads = 2;
  c.layers = 1;
  c.classifier_hidden = 8;
  return c;
}

TrainConfig tiny_train(std::uint64_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 4;
  t.adam.lr = 1e-3;
  t.config_space.n_values = {12};
  t.config_space.dz_values = {2};
  t.seed = 99;
  return t;
}

std::string temp_file(const std::string& name) {
  return (fs::temp_directory_path() / ("acid_unit_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::vector<Dataset> probe_batch(std::size_t count) {
  ConfigSpace space;
  space.n_values = {12};
  space.dz_values = {2};
  return make_corpus(space, count, SeedRange{kTestSeeds.begin, kTestSeeds.begin + 100000});
}

bool same_params(const ModelParams<double>& a, const ModelParams<double>& b) {
  const auto na = a.named(), nb = b.named();
  for (std::size_t i = 0; i < na.size(); ++i)
    for (std::size_t j = 0; j < na[i].second.size(); ++j)
      if (na[i].second.data()[j] != nb[i].second.data()[j]) return false;
  return true;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("bce at zero logit is ln 2") {
  const std::vector<int> labels{0, 1, 1};
  auto loss = bce_loss(Tensor<double>::from({3}, {0.0, 0.0, 0.0}), labels);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("bce saturates without overflow") {
  const std::vector<int> one{1}, zero{0};
  CHECK(bce_loss(Tensor<double>::from({1}, {20.0}), one).item() < 1e-8);
  CHECK(bce_loss(Tensor<double>::from({1}, {-20.0}), zero).item() < 1e-8);
  const double big = bce_loss(Tensor<double>::from({1}, {-800.0}), one).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(800.0));
}

TEST_CASE("bce matches the naive formula and its gradient") {
  RngStream rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    auto z = random_tensor({6}, rng, 3.0);
    std::vector<int> y(6);
    for (auto& l : y) l = static_cast<int>(rng.below(2));
    double naive = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
      naive -= (y[i] ? std::log(p) : std::log(1.0 - p)) / 6.0;
    }
    CHECK(rel_err(bce_loss(z, y).item(), naive) < 1e-10);
    std::vector<double> zv(z.data().begin(), z.data().end());
    CHECK(rel_err(bce_value(zv, y), naive) < 1e-10);
    CHECK(grad_check([&] { return bce_loss(z, y); }, {z}).max_rel_err < 1e-6);
  }
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  std::vector<double> w{1.0, -2.0}, g{0.0, 0.0}, m(2, 0.0), v(2, 0.0);
  adam_update<double>(w, g, m, v, 1, AdamConfig{});
  CHECK(w[0] == 1.0);
  CHECK(w[1] == -2.0);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  std::vector<double> w{1.0, 1.0}, g{3.0, -0.5}, m(2, 0.0), v(2, 0.0);
  AdamConfig c;
  c.lr = 0.01;
  adam_update<double>(w, g, m, v, 1, c);
  CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-7));
  CHECK(w[1] == doctest::Approx(1.01).epsilon(1e-7));
}

TEST_CASE("adam matches a scalar reference") {
  RngStream rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    AdamConfig c;
    c.lr = 0.001 + 0.1 * rng.uniform();
    c.beta1 = 0.5 + 0.45 * rng.uniform();
    c.beta2 = 0.9 + 0.099 * rng.uniform();
    ScalarAdam ref{c.lr, c.beta1, c.beta2, c.eps};
    std::vector<double> w{rng.normal()}, m{0.0}, v{0.0};
    double wr = w[0];
    for (std::uint64_t t = 1; t <= 3; ++t) {
      // f(w) = w^2
      std::vector<double> g{2.0 * w[0]};
      adam_update<double>(w, g, m, v, t, c);
      wr = ref.step(wr, 2.0 * wr);
      CHECK(rel_err(w[0], wr, 1e-300) < 1e-12);
    }
  }
}

TEST_CASE("adam_step treats missing gradients as zero") {
  auto a = Tensor<double>::from({2}, {1.0, 2.0}, true), b = Tensor<double>::from({1}, {3.0}, true);
  backward(sum(square(a)));
  std::vector<Tensor<double>> params{a, b};
  auto state = OptimizerState<double>::fresh(params);
  adam_step<double>(params, state, AdamConfig{});
  CHECK(state.t == 1);
  CHECK(b.data()[0] == 3.0);
  CHECK(a.data()[0] < 1.0);
}

TEST_CASE("gradient clipping rescales to the bound") {
  auto a = Tensor<double>::from({2}, {0.0, 0.0}, true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  std::vector<Tensor<double>> params{a};
  CHECK(clip_grad_norm<double>(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(a.grad()[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm<double>(params, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("invalid train configs are rejected") {
  auto t = tiny_train(1);
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = tiny_train(1);
  t.adam.lr = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = tiny_train(1);
  t.adam.beta1 = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = tiny_train(1);
  t.steps = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  const auto back = TrainConfig::from_json(tiny_train(7).to_json());
  CHECK(back.to_json() == tiny_train(7).to_json());
}

TEST_CASE("initial probe loss is near ln 2") {
  const auto model = AcidModel<double>::initialize(tiny_model(), 3);
  const double loss = probe_loss(model, probe_batch(16));
  CHECK(loss >= 0.6);
  CHECK(loss <= 0.8);
}

TEST_CASE("one step with a single dataset gives finite loss and gradients") {
  auto state = TrainState<double>::start(AcidModel<double>::initialize(tiny_model(), 4), 5);
  perturb(state.model.params(), 6);
  auto cfg = tiny_train(1);
  cfg.batch_size = 1;
  const auto batch = probe_batch(1);
  const auto r = train_step(state, std::span<const Dataset>(batch), cfg);
  CHECK(std::isfinite(r.loss));
  CHECK(std::isfinite(r.grad_norm));
  CHECK(r.grad_norm > 0.0);
  CHECK(state.step == 1);
}

TEST_CASE("micro-batching does not change the step") {
  const auto batch = probe_batch(4);
  auto run = [&](std::size_t budget) {
    ModelConfig c = tiny_model();
    c.dropout = 0.0;
    auto state = TrainState<double>::start(AcidModel<double>::initialize(c, 7), 8);
    perturb(state.model.params(), 9);
    auto cfg = tiny_train(1);
    cfg.token_budget = budget;
    const auto r = train_step(state, std::span<const Dataset>(batch), cfg);
    return std::make_pair(r.loss, state.model.params().named()[0].second.data()[0]);
  };
  const auto whole = run(100000), split = run(1);
  CHECK(rel_err(whole.first, split.first) < 1e-12);
  CHECK(rel_err(whole.second, split.second) < 1e-12);
}

TEST_CASE("64-bit training is reproducible and resumable") {
  auto fresh = [] { return TrainState<double>::start(AcidModel<double>::initialize(tiny_model(), 10), 11); };
  std::vector<double> trace_a, trace_b;
  TrainHooks ha, hb;
  ha.on_record = [&](const TrainRecord& r) { trace_a.push_back(r.loss); };
  hb.on_record = [&](const TrainRecord& r) { trace_b.push_back(r.loss); };

  auto a = fresh();
  train(a, tiny_train(4), ha);
  auto b = fresh();
  train(b, tiny_train(4), hb);
  CHECK(trace_a == trace_b);
  CHECK(same_params(a.model.params(), b.model.params()));

  // 2 steps, checkpoint, reload, 2 more == 4 straight.
  auto c = fresh();
  train(c, tiny_train(2));
  const std::string path = temp_file("resume.ckpt");
  save_checkpoint(path, c, tiny_train(2).to_json());
  auto loaded = load_checkpoint<double>(path);
  CHECK(loaded.state.step == 2);
  train(loaded.state, tiny_train(4));
  CHECK(loaded.state.step == 4);
  CHECK(same_params(loaded.state.model.params(), a.model.params()));
  CHECK(loaded.state.optimizer.t == a.optimizer.t);
  fs::remove(path);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto state = TrainState<float>::start(AcidModel<float>::initialize(tiny_model(), 12), 13);
  auto cfg = tiny_train(2);
  train(state, cfg);
  const std::string p1 = temp_file("a.ckpt"), p2 = temp_file("b.ckpt");
  save_checkpoint(p1, state, cfg.to_json());
  const auto loaded = load_checkpoint<float>(p1);
  save_checkpoint(p2, loaded.state, loaded.train_config);
  CHECK(file_fingerprint(p1) == file_fingerprint(p2));
  const auto probe = probe_batch(6);
  CHECK(state.model.logits(probe) == loaded.state.model.logits(probe));
  const auto header = read_checkpoint_header(p1);
  CHECK(header.step == 2);
  CHECK(header.precision == Precision::F32);
  CHECK(header.has_optimizer);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("damaged checkpoints are rejected") {
  auto state = TrainState<double>::start(AcidModel<double>::initialize(tiny_model(), 14), 15);
  const std::string p = temp_file("bad.ckpt");
  save_checkpoint(p, state);
  fs::resize_file(p, fs::file_size(p) - 3);
  CHECK_THROWS_AS(load_checkpoint<double>(p), FormatError);
  fs::remove(p);
  CHECK_THROWS(load_checkpoint<double>(temp_file("missing.ckpt")));
}

TEST_CASE("training never draws from the test seed range") {
  auto state = TrainState<double>::start(AcidModel<double>::initialize(tiny_model(), 16), 17);
  auto cfg = tiny_train(1);
  cfg.seed_range = SeedRange{kTestSeeds.begin - 10, kTestSeeds.begin + 10};
  CHECK_THROWS_AS(train(state, cfg), SeedGuardError);
}

TEST_CASE("finetune with zero steps is the identity") {
  auto state = TrainState<double>::start(AcidModel<double>::initialize(tiny_model(), 18), 19);
  perturb(state.model.params(), 20);
  const auto before = state.model.cast<double>();
  FinetuneConfig fc;
  fc.train = tiny_train(1);
  fc.train.steps = 0;
  const auto corpus = probe_batch(4);
  finetune(state, std::span<const Dataset>(corpus), fc);
  CHECK(same_params(state.model.params(), before.params()));
}

TEST_CASE("finetune rejects unlabeled corpora and warns on short datasets") {
  auto state = TrainState<double>::start(AcidModel<double>::initialize(tiny_model(), 21), 22);
  FinetuneConfig fc;
  fc.train = tiny_train(1);
  fc.sample_rows = 50;
  auto corpus = probe_batch(3);
  std::vector<std::string> warnings;
  finetune(state, std::span<const Dataset>(corpus), fc, {}, [&](const std::string& w) { warnings.push_back(w); });
  CHECK_FALSE(warnings.empty());
  CHECK(state.step == 1);
  corpus[1].label.reset();
  CHECK_THROWS_AS(finetune(state, std::span<const Dataset>(corpus), fc), ConfigError);
}

TEST_CASE("repeated steps on one batch lower its loss") {
  ModelConfig c = tiny_model();
  c.dropout = 0.0;
  auto state = TrainState<double>::start(AcidModel<double>::initialize(c, 23), 24);
  const auto batch = probe_batch(8);
  const double before = probe_loss(state.model, batch);
  auto cfg = tiny_train(1);
  cfg.adam.lr = 1e-2;
  for (int i = 0; i < 40; ++i) train_step(state, std::span<const Dataset>(batch), cfg);
  CHECK(probe_loss(state.model, batch) < before - 0.05);
}

}  // TEST_SUITE
