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

#include "acid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <tuple>

#include "acid/errors.hpp"
#include "acid/evaluation.hpp"

namespace acid {

// --------------------------------------------------------------------- loss

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 1 || logits.size() != labels.size() || labels.empty()) {
    throw DimensionError("bce_loss: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size();
  std::vector<int> g(labels.begin(), labels.end());
  for (int v : g) {
    if (v != 0 && v != 1) throw ContractError("bce_loss: labels must be 0 or 1");
  }
  const auto x = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = static_cast<double>(x[i]);
    total += std::max(l, 0.0) - l * g[i] + std::log1p(std::exp(-std::abs(l)));
  }
  return detail::make_result<T>(
      {}, {static_cast<T>(total / static_cast<double>(n))}, {logits.node_ptr()},
      [g = std::move(g), n](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        T* gi = in.ensure_grad();
        const double up = static_cast<double>(self.grad[0]) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double l = static_cast<double>(in.value[i]);
          const double sig = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
          gi[i] += static_cast<T>(up * (sig - g[i]));
        }
      });
}

double bce_value(std::span<const double> logits, std::span<const int> labels) {
  if (logits.size() != labels.size() || labels.empty()) {
    throw DimensionError("bce_value: " + std::to_string(logits.size()) + " logits vs " +
                         std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double l = logits[i];
    total += std::max(l, 0.0) - l * labels[i] + std::log1p(std::exp(-std::abs(l)));
  }
  return total / static_cast<double>(labels.size());
}

// --------------------------------------------------------------------- adam

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
}

template <typename T>
OptimizerState<T> OptimizerState<T>::fresh(std::span<const Tensor<T>> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), T(0));
    s.v.emplace_back(p.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v,
                 std::uint64_t t, const AdamConfig& c) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw DimensionError("adam_update: mismatched buffer sizes");
  }
  if (t == 0) throw ContractError("adam_update: step index is 1-based");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double update = c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
    w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, OptimizerState<T>& state, const AdamConfig& config) {
  if (state.empty()) {
    state = OptimizerState<T>::fresh(std::span<const Tensor<T>>(params.data(), params.size()));
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("optimizer holds " + std::to_string(state.m.size()) + " moments for " +
                         std::to_string(params.size()) + " parameters");
  }
  ++state.t;
  std::vector<T> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i];
    if (state.m[i].size() != p.size()) {
      throw DimensionError("optimizer moment " + std::to_string(i) + " does not match its parameter");
    }
    std::span<const T> g = p.grad();
    if (!p.has_grad()) {
      zeros.assign(p.size(), T(0));
      g = zeros;
    }
    adam_update<T>(p.mutable_data(), g, state.m[i], state.v[i], state.t, config);
  }
}

template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
  double ss = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad()) ss += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(ss);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * f);
    }
  }
  return norm;
}

// ------------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  adam.validate();
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (token_budget < 1) throw ConfigError("token_budget must be >= 1");
  if (auc_window < 1) throw ConfigError("auc_window must be >= 1");
  if (telemetry_every < 1) throw ConfigError("telemetry_every must be >= 1");
  if (seed_range.width() == 0) throw ConfigError("training seed range is empty");
  config_space.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"clip_norm", clip_norm},
          {"config_space", config_space.to_json()},
          {"seed_range", seed_range.str()},
          {"checkpoint_every", checkpoint_every},
          {"telemetry_every", telemetry_every},
          {"seed", seed},
          {"token_budget", token_budget},
          {"auc_window", auc_window}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("config_space")) c.config_space = ConfigSpace::from_json(j["config_space"]);
    if (j.contains("seed_range")) c.seed_range = SeedRange::parse(j["seed_range"].get<std::string>());
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.telemetry_every = j.value("telemetry_every", c.telemetry_every);
    c.seed = j.value("seed", c.seed);
    c.token_budget = j.value("token_budget", c.token_budget);
    c.auc_window = j.value("auc_window", c.auc_window);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json TrainRecord::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"step", step},
          {"loss", loss},
          {"running_auc", opt(running_auc)},
          {"h0_logit_mean", opt(h0_logit_mean)},
          {"h1_logit_mean", opt(h1_logit_mean)},
          {"h0_logit_hist", h0_hist},
          {"h1_logit_hist", h1_hist},
          {"grad_norm", grad_norm},
          {"wallclock_ms", wallclock_ms}};
}

// -------------------------------------------------------------------- steps

namespace {

constexpr std::uint64_t kDropoutKey = 0xD809'0A7Cull;
constexpr std::uint64_t kFinetuneKey = 0xF1E7'7E5Eull;

std::vector<int> labels_of(std::span<const Dataset> batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const auto& ds : batch) {
    if (!ds.label) throw ConfigError("training dataset seed=" + std::to_string(ds.seed) + " has no label");
    out.push_back(*ds.label);
  }
  return out;
}

std::string seeds_of(std::span<const Dataset> batch) {
  std::string s;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(batch[i].seed);
  }
  return s;
}

template <typename T>
std::vector<Tensor<T>> parameter_list(const AcidModel<T>& model) {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : model.params().named()) out.push_back(t);
  return out;
}

std::size_t histogram_bin(double v) {
  return static_cast<std::size_t>(std::upper_bound(std::begin(kLogitBins), std::end(kLogitBins), v) -
                                  std::begin(kLogitBins));
}

class Telemetry {
 public:
  explicit Telemetry(std::size_t window) : window_(window) {}

  TrainRecord record(std::uint64_t step, const StepResult& r, double ms) {
    history_.push_back(r);
    if (history_.size() > window_) history_.pop_front();
    TrainRecord rec;
    rec.step = step;
    rec.loss = r.loss;
    rec.grad_norm = r.grad_norm;
    rec.wallclock_ms = ms;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& h : history_) {
      scores.insert(scores.end(), h.logits.begin(), h.logits.end());
      labels.insert(labels.end(), h.labels.begin(), h.labels.end());
    }
    if (std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0) {
      rec.running_auc = auc(scores, labels);
    }
    const std::size_t bins = std::size(kLogitBins) + 1;
    rec.h0_hist.assign(bins, 0);
    rec.h1_hist.assign(bins, 0);
    double sum[2] = {0, 0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t i = 0; i < r.logits.size(); ++i) {
      const int g = r.labels[i];
      sum[g] += r.logits[i];
      ++cnt[g];
      (g ? rec.h1_hist : rec.h0_hist)[histogram_bin(r.logits[i])]++;
    }
    if (cnt[0]) rec.h0_logit_mean = sum[0] / static_cast<double>(cnt[0]);
    if (cnt[1]) rec.h1_logit_mean = sum[1] / static_cast<double>(cnt[1]);
    return rec;
  }

 private:
  std::size_t window_;
  std::deque<StepResult> history_;
};

}  // namespace

template <typename T>
StepResult train_step(TrainState<T>& state, std::span<const Dataset> batch, const TrainConfig& config) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const std::vector<int> labels = labels_of(batch);
  std::vector<Tensor<T>> params = parameter_list(state.model);
  for (auto& p : params) p.zero_grad();

  const Dataset& first = batch.front();
  const std::size_t tokens = first.n() * (first.dx() + first.dy() + first.dz());
  const std::size_t chunk = std::max<std::size_t>(1, config.token_budget / std::max<std::size_t>(tokens, 1));
  RngStream dropout_rng = RngStream(mix64(state.seed ^ kDropoutKey)).split(state.step);

  StepResult result;
  result.labels = labels;
  double loss = 0.0;
  try {
    for (std::size_t lo = 0; lo < batch.size(); lo += chunk) {
      const std::size_t hi = std::min(batch.size(), lo + chunk);
      const auto part = batch.subspan(lo, hi - lo);
      const Tensor<T> logits = state.model.forward(part, true, &dropout_rng);
      const std::span<const int> part_labels(labels.data() + lo, hi - lo);
      const T weight = static_cast<T>(static_cast<double>(hi - lo) / static_cast<double>(batch.size()));
      const Tensor<T> part_loss = scale(bce_loss(logits, part_labels), weight);
      loss += static_cast<double>(part_loss.item());
      for (T v : logits.data()) result.logits.push_back(static_cast<double>(v));
      backward(part_loss);
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite loss " + std::to_string(loss));
  } catch (const NumericError& e) {
    for (auto& p : params) p.zero_grad();
    throw NumericError("step " + std::to_string(state.step + 1) + ": " + e.what() +
                       "; batch seeds [" + seeds_of(batch) + "]; parameters kept from step " +
                       std::to_string(state.step));
  }
  result.loss = loss;
  result.grad_norm = clip_grad_norm<T>(params, config.clip_norm);
  if (!std::isfinite(result.grad_norm)) {
    for (auto& p : params) p.zero_grad();
    throw NumericError("step " + std::to_string(state.step + 1) + ": non-finite gradient norm; batch seeds [" +
                       seeds_of(batch) + "]; parameters kept from step " + std::to_string(state.step));
  }
  adam_step<T>(params, state.optimizer, config.adam);
  for (auto& p : params) p.zero_grad();
  ++state.step;
  return result;
}

template <typename T>
void train(TrainState<T>& state, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  DatasetStream stream(config.config_space, config.seed_range, state.seed, {kTestSeeds});
  Telemetry telemetry(config.auc_window);
  while (state.step < config.steps) {
    const auto t0 = std::chrono::steady_clock::now();
    stream.seek(state.stream_position);
    const std::vector<Dataset> batch = stream.next_batch(config.batch_size);
    for (const auto& ds : batch) {
      if (kTestSeeds.contains(ds.seed)) throw std::logic_error("test-range seed reached training");
    }
    const StepResult r = train_step(state, std::span<const Dataset>(batch), config);
    state.stream_position = stream.position();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const TrainRecord rec = telemetry.record(state.step, r, ms);
    if (hooks.on_record && (state.step % config.telemetry_every == 0 || state.step == config.steps)) {
      hooks.on_record(rec);
    }
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 &&
        state.step != config.steps) {
      hooks.on_checkpoint(state.step);
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state.step);
}

template <typename T>
void finetune(TrainState<T>& state, std::span<const Dataset> corpus, const FinetuneConfig& config,
              const TrainHooks& hooks, const std::function<void(const std::string&)>& warn) {
  if (config.sample_rows < 1) throw ConfigError("sample_rows must be >= 1");
  if (config.train.steps == 0) return;
  config.train.validate();
  if (corpus.empty()) throw ConfigError("fine-tuning corpus is empty");
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Dataset& ds = corpus[i];
    if (!ds.label) throw ConfigError("fine-tuning needs labels; dataset " + std::to_string(i) + " has none");
    ds.validate();
    groups[{ds.dx(), ds.dy(), ds.dz()}].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> group_list;
  for (const auto& [key, members] : groups) group_list.push_back(&members);
  std::vector<bool> warned(corpus.size(), false);

  Telemetry telemetry(config.train.auc_window);
  const RngStream base(mix64(config.train.seed ^ kFinetuneKey));
  for (std::uint64_t s = 0; s < config.train.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream rng = base.split(s);
    // Groups are weighted by how many datasets they hold.
    std::size_t pick = rng.below(corpus.size());
    const std::vector<std::size_t>* group = nullptr;
    for (const auto* g : group_list) {
      if (pick < g->size()) {
        group = g;
        break;
      }
      pick -= g->size();
    }
    std::vector<Dataset> batch;
    for (std::size_t b = 0; b < config.train.batch_size; ++b) {
      const std::size_t idx = (*group)[rng.below(group->size())];
      const Dataset& ds = corpus[idx];
      const std::size_t n = ds.n();
      std::vector<std::size_t> rows(config.sample_rows);
      if (n >= config.sample_rows) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        for (std::size_t i = 0; i < config.sample_rows; ++i) std::swap(all[i], all[i + rng.below(n - i)]);
        std::copy_n(all.begin(), config.sample_rows, rows.begin());
      } else {
        if (!warned[idx] && warn) {
          warn("dataset " + std::to_string(idx) + " has " + std::to_string(n) + " rows < " +
               std::to_string(config.sample_rows) + "; sampling rows with replacement");
        }
        warned[idx] = true;
        for (auto& r : rows) r = rng.below(n);
      }
      batch.push_back(ds.take_rows(rows));
    }
    const StepResult r = train_step(state, std::span<const Dataset>(batch), config.train);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const TrainRecord rec = telemetry.record(state.step, r, ms);
    if (hooks.on_record && ((s + 1) % config.train.telemetry_every == 0 || s + 1 == config.train.steps)) {
      hooks.on_record(rec);
    }
    if (hooks.on_checkpoint && config.train.checkpoint_every > 0 && (s + 1) % config.train.checkpoint_every == 0 &&
        s + 1 != config.train.steps) {
      hooks.on_checkpoint(state.step);
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state.step);
}

template <typename T>
double probe_loss(const AcidModel<T>& model, std::span<const Dataset> datasets) {
  const std::vector<int> labels = labels_of(datasets);
  const std::vector<double> logits = model.logits(datasets);
  return bce_value(logits, labels);
}

#define ACID_INSTANTIATE_TRAINER(T)                                                              \
  template Tensor<T> bce_loss(const Tensor<T>&, std::span<const int>);                          \
  template struct OptimizerState<T>;                                                             \
  template void adam_update(std::span<T>, std::span<const T>, std::span<T>, std::span<T>,        \
                            std::uint64_t, const AdamConfig&);                                   \
  template void adam_step(std::span<Tensor<T>>, OptimizerState<T>&, const AdamConfig&);          \
  template double clip_grad_norm(std::span<Tensor<T>>, double);                                  \
  template StepResult train_step(TrainState<T>&, std::span<const Dataset>, const TrainConfig&);  \
  template void train(TrainState<T>&, const TrainConfig&, const TrainHooks&);                    \
  template void finetune(TrainState<T>&, std::span<const Dataset>, const FinetuneConfig&,        \
                         const TrainHooks&, const std::function<void(const std::string&)>&);     \
  template double probe_loss(const AcidModel<T>&, std::span<const Dataset>);

ACID_INSTANTIATE_TRAINER(float)
ACID_INSTANTIATE_TRAINER(double)

}  // namespace acid
