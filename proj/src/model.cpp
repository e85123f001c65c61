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

#include "acid/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "acid/errors.hpp"

namespace acid {

// ------------------------------------------------------------------- config

void ModelConfig::validate() const {
  if (e < 1 || heads < 1 || layers < 1) throw ConfigError("e, heads and layers must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (ffn_hidden < 1 || classifier_hidden < 1) throw ConfigError("hidden widths must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"e", e},
          {"h", heads},
          {"L", layers},
          {"dropout", dropout},
          {"ffn_hidden", ffn_hidden},
          {"classifier_hidden", classifier_hidden}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.e = j.at("e").get<std::size_t>();
    c.heads = j.at("h").get<std::size_t>();
    c.layers = j.at("L").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    c.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("invalid model config: ") + ex.what());
  }
  c.validate();
  return c;
}

// --------------------------------------------------------------- parameters

namespace {

template <typename T>
FeedForward<T> make_ffn(std::size_t in, std::size_t hidden, std::size_t out) {
  return {Tensor<T>::zeros({in, hidden}, true), Tensor<T>::zeros({hidden}, true),
          Tensor<T>::zeros({hidden, out}, true), Tensor<T>::zeros({out}, true)};
}

template <typename T>
AttentionBlockWeights<T> make_block(std::size_t e, std::size_t h, std::size_t ffn_hidden) {
  AttentionBlockWeights<T> b;
  b.mha.wa = Tensor<T>::zeros({h, e, e}, true);
  b.mha.wb = Tensor<T>::zeros({h, e, e}, true);
  b.mha.wq = Tensor<T>::zeros({h, e, e}, true);
  b.mha.wk = Tensor<T>::zeros({h, e, e}, true);
  b.mha.wv = Tensor<T>::zeros({h, e, e}, true);
  b.mha.wh = Tensor<T>::zeros({h * e, e}, true);
  b.residual = Tensor<T>::zeros({e, e}, true);
  b.ln_gain = Tensor<T>::zeros({e}, true);
  b.ln_bias = Tensor<T>::zeros({e}, true);
  b.ffn = make_ffn<T>(e, ffn_hidden * e, e);
  return b;
}

template <typename T>
void push_ffn(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& prefix,
              const FeedForward<T>& f) {
  out.emplace_back(prefix + ".w1", f.w1);
  out.emplace_back(prefix + ".b1", f.b1);
  out.emplace_back(prefix + ".w2", f.w2);
  out.emplace_back(prefix + ".b2", f.b2);
}

template <typename T>
void push_block(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& prefix,
                const AttentionBlockWeights<T>& b) {
  out.emplace_back(prefix + ".mha.wa", b.mha.wa);
  out.emplace_back(prefix + ".mha.wb", b.mha.wb);
  out.emplace_back(prefix + ".mha.wq", b.mha.wq);
  out.emplace_back(prefix + ".mha.wk", b.mha.wk);
  out.emplace_back(prefix + ".mha.wv", b.mha.wv);
  out.emplace_back(prefix + ".mha.wh", b.mha.wh);
  out.emplace_back(prefix + ".residual", b.residual);
  out.emplace_back(prefix + ".ln_gain", b.ln_gain);
  out.emplace_back(prefix + ".ln_bias", b.ln_bias);
  push_ffn(out, prefix + ".ffn", b.ffn);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::allocate(const ModelConfig& config) {
  config.validate();
  const std::size_t e = config.e, h = config.heads, fh = config.ffn_hidden * e;
  ModelParams p;
  p.emb_xy = make_ffn<T>(1, fh, e);
  p.emb_z = make_ffn<T>(1, fh, e);
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayerWeights<T> layer;
    layer.sod_xy = make_block<T>(e, h, config.ffn_hidden);
    layer.sod_z = make_block<T>(e, h, config.ffn_hidden);
    layer.cod = make_block<T>(e, h, config.ffn_hidden);
    layer.sos_xy = make_block<T>(e, h, config.ffn_hidden);
    layer.sos_z = make_block<T>(e, h, config.ffn_hidden);
    layer.ffn_xy = make_ffn<T>(e, fh, e);
    layer.ffn_z = make_ffn<T>(e, fh, e);
    p.layers.push_back(std::move(layer));
  }
  p.summary = make_ffn<T>(e, fh, h * e);
  p.classifier = make_ffn<T>(h, config.classifier_hidden, 1);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::initialize(const ModelConfig& config, RngStream& rng) {
  ModelParams p = allocate(config);
  for (auto& [name, t] : p.named()) {
    auto values = t.mutable_data();
    if (ends_with(name, ".ln_gain")) {
      std::fill(values.begin(), values.end(), T(1));
    } else if (t.rank() >= 2 && name != "classifier.w2") {
      const double fan_in = static_cast<double>(t.dim(-2));
      const double fan_out = static_cast<double>(t.dim(-1));
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : values) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
  }
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  push_ffn(out, "emb_xy", emb_xy);
  push_ffn(out, "emb_z", emb_z);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l);
    push_block(out, p + ".sod_xy", layers[l].sod_xy);
    push_block(out, p + ".sod_z", layers[l].sod_z);
    push_block(out, p + ".cod", layers[l].cod);
    push_block(out, p + ".sos_xy", layers[l].sos_xy);
    push_block(out, p + ".sos_z", layers[l].sos_z);
    push_ffn(out, p + ".ffn_xy", layers[l].ffn_xy);
    push_ffn(out, p + ".ffn_z", layers[l].ffn_z);
  }
  push_ffn(out, "summary", summary);
  push_ffn(out, "classifier", classifier);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.size();
  return n;
}

// ----------------------------------------------------------------- building blocks

template <typename T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x) const {
  return add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2);
}

namespace {

/// [h, d, e] -> [d, h*e] so that x [.., d] maps to all heads at once.
template <typename T>
Tensor<T> concat_heads(const Tensor<T>& w) {
  const std::size_t h = w.dim(0), d = w.dim(1), e = w.dim(2);
  return reshape(permute(w, {1, 0, 2}), {d, h * e});
}

template <typename T>
struct KeyValue {
  Tensor<T> k;  // [..., lb, h*e]
  Tensor<T> v;
};

// (b wb_i) wk_i == b (wb_i wk_i): fold each head's two projections into one
// matrix, then project all heads with a single product.
template <typename T>
KeyValue<T> project_kv(const Tensor<T>& b, const MultiHeadWeights<T>& w) {
  return {matmul(b, concat_heads(matmul(w.wb, w.wk))), matmul(b, concat_heads(matmul(w.wb, w.wv)))};
}

template <typename T>
Tensor<T> mha_kv(const Tensor<T>& a, const KeyValue<T>& kv, const MultiHeadWeights<T>& w) {
  const std::size_t e = w.wq.dim(-1);
  const Tensor<T> q = matmul(a, concat_heads(matmul(w.wa, w.wq)));
  const Tensor<T> o = multihead_attention(q, kv.k, kv.v, w.heads(),
                                          static_cast<T>(1.0 / std::sqrt(static_cast<double>(e))));
  return matmul(o, w.wh);
}

template <typename T>
Tensor<T> attention_block_kv(const Tensor<T>& a, const KeyValue<T>& kv,
                             const AttentionBlockWeights<T>& w, const ForwardContext& ctx) {
  RngStream idle;
  RngStream& rng = ctx.rng ? *ctx.rng : idle;
  if (ctx.training && ctx.dropout > 0.0 && !ctx.rng) {
    throw ContractError("training-mode dropout needs an RNG stream");
  }
  const Tensor<T> proj = matmul(a, w.residual);
  const Tensor<T> ir = layer_norm(add(proj, dropout(mha_kv(a, kv, w.mha), ctx.dropout, ctx.training, rng)),
                                  w.ln_gain, w.ln_bias, -1);
  return add(proj, dropout(w.ffn(ir), ctx.dropout, ctx.training, rng));
}

}  // namespace

template <typename T>
Tensor<T> attn(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& wq, const Tensor<T>& wk,
               const Tensor<T>& wv) {
  const std::size_t e = wq.dim(-1);
  return scaled_dot_attention(matmul(a, wq), matmul(b, wk), matmul(b, wv),
                              static_cast<T>(1.0 / std::sqrt(static_cast<double>(e))));
}

template <typename T>
Tensor<T> mha(const Tensor<T>& a, const Tensor<T>& b, const MultiHeadWeights<T>& w) {
  if (a.rank() < 2 || b.rank() < 2 || a.size() / (a.dim(-2) * a.dim(-1)) != b.size() / (b.dim(-2) * b.dim(-1))) {
    throw DimensionError("mha: batch mismatch between " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  return mha_kv(a, project_kv(b, w), w);
}

template <typename T>
Tensor<T> attention_block(const Tensor<T>& a, const Tensor<T>& b, const AttentionBlockWeights<T>& w,
                          const ForwardContext& ctx) {
  return attention_block_kv(a, project_kv(b, w.mha), w, ctx);
}

template <typename T>
Encoded<T> stack_batch(std::span<const Dataset> batch) {
  if (batch.empty()) throw ContractError("empty dataset batch");
  const Dataset& first = batch.front();
  const std::size_t n = first.n(), dx = first.dx(), dy = first.dy(), dz = first.dz();
  for (const auto& ds : batch) {
    ds.validate();
    if (ds.n() != n || ds.dx() != dx || ds.dy() != dy || ds.dz() != dz) {
      throw DimensionError("batch mixes dataset shapes (" + std::to_string(n) + "," +
                           std::to_string(dx) + "," + std::to_string(dy) + "," +
                           std::to_string(dz) + ") and (" + std::to_string(ds.n()) + "," +
                           std::to_string(ds.dx()) + "," + std::to_string(ds.dy()) + "," +
                           std::to_string(ds.dz()) + ")");
    }
  }
  auto stack = [&](auto pick, std::size_t d) {
    std::vector<T> values;
    values.reserve(batch.size() * n * d);
    for (const auto& ds : batch) {
      const DataMatrix& m = pick(ds);
      for (Eigen::Index i = 0; i < m.size(); ++i) values.push_back(static_cast<T>(m.data()[i]));
    }
    return Tensor<T>::from({batch.size(), n, d, 1}, std::move(values));
  };
  return {stack([](const Dataset& ds) -> const DataMatrix& { return ds.x; }, dx),
          stack([](const Dataset& ds) -> const DataMatrix& { return ds.y; }, dy),
          stack([](const Dataset& ds) -> const DataMatrix& { return ds.z; }, dz)};
}

template <typename T>
Encoded<T> embed(const Encoded<T>& raw, const ModelParams<T>& params) {
  return {params.emb_xy(raw.x), params.emb_xy(raw.y), params.emb_z(raw.z)};
}

namespace {

/// Self-attention within each column: tokens are the n samples.
template <typename T>
Tensor<T> over_columns(const Tensor<T>& a, const AttentionBlockWeights<T>& w, const ForwardContext& ctx) {
  const Tensor<T> cols = permute(a, {0, 2, 1, 3});  // [B, d, n, e]
  return permute(attention_block(cols, cols, w, ctx), {0, 2, 1, 3});
}

}  // namespace

// Row-wise blocks run directly on [B, n, d, e]: tokens are the d dimensions
// of one sample.
template <typename T>
Encoded<T> layer_forward(const Encoded<T>& in, const EncoderLayerWeights<T>& w,
                         const ForwardContext& ctx) {
  const KeyValue<T> z_kv = project_kv(in.z, w.cod.mha);
  auto update_xy = [&](const Tensor<T>& v) {
    Tensor<T> acc = add(v, attention_block(v, v, w.sod_xy, ctx));
    acc = add(acc, attention_block_kv(v, z_kv, w.cod, ctx));
    acc = add(acc, over_columns(v, w.sos_xy, ctx));
    return w.ffn_xy(acc);
  };
  Encoded<T> out;
  out.x = update_xy(in.x);
  out.y = update_xy(in.y);
  Tensor<T> z = add(in.z, attention_block(in.z, in.z, w.sod_z, ctx));
  z = add(z, over_columns(in.z, w.sos_z, ctx));
  out.z = w.ffn_z(z);
  return out;
}

template <typename T>
Tensor<T> interdependence(const Tensor<T>& xt, const Tensor<T>& yt) {
  if (xt.rank() != 5 || yt.rank() != 5 || xt.dim(0) != yt.dim(0) || xt.dim(1) != yt.dim(1) ||
      xt.dim(3) != yt.dim(3) || xt.dim(4) != yt.dim(4)) {
    throw DimensionError("interdependence: incompatible shapes " + shape_str(xt.shape()) + " and " +
                         shape_str(yt.shape()));
  }
  const std::size_t batch = xt.dim(0), h = xt.dim(3), dx = xt.dim(2), dy = yt.dim(2);
  const Tensor<T> xp = permute(xt, {0, 1, 3, 2, 4});  // [B, n, h, dX, e]
  const Tensor<T> yp = permute(yt, {0, 1, 3, 4, 2});  // [B, n, h, e, dY]
  const Tensor<T> s = square(matmul(xp, yp));         // [B, n, h, dX, dY]
  const Tensor<T> m = mean_axis(s, 1);                // [B, h, dX, dY]
  return max_axis(reshape(m, {batch, h, dx * dy}), 2);
}

template <typename T>
Tensor<T> summarize(const Tensor<T>& x, const Tensor<T>& y, const FeedForward<T>& summary,
                    std::size_t heads) {
  auto expand = [&](const Tensor<T>& v) {
    const Shape& s = v.shape();  // [B, n, d, e]
    const Tensor<T> t = summary(v);
    return reshape(t, {s[0], s[1], s[2], heads, t.dim(-1) / heads});
  };
  return interdependence(expand(x), expand(y));
}

// ---------------------------------------------------------------- AcidModel

template <typename T>
AcidModel<T>::AcidModel(ModelConfig config, ModelParams<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (params_.layers.size() != config_.layers) {
    throw ConfigError("parameter set has " + std::to_string(params_.layers.size()) +
                      " layers, config says " + std::to_string(config_.layers));
  }
}

template <typename T>
AcidModel<T> AcidModel<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  RngStream rng(seed);
  return AcidModel(config, ModelParams<T>::initialize(config, rng));
}

template <typename T>
Tensor<T> AcidModel<T>::forward(std::span<const Dataset> batch, bool training, RngStream* rng) const {
  const ForwardContext ctx{config_.dropout, training, rng};
  Encoded<T> h = embed(stack_batch<T>(batch), params_);
  for (const auto& layer : params_.layers) h = layer_forward(h, layer, ctx);
  const Tensor<T> r = summarize(h.x, h.y, params_.summary, config_.heads);
  // R spans several decades; T sees it on a log scale.
  Tensor<T> logits = reshape(params_.classifier(log1p(r)), {batch.size()});
  const auto values = logits.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(static_cast<double>(values[i]))) {
      const Dataset& ds = batch[i];
      throw NumericError("non-finite logit for dataset seed=" + std::to_string(ds.seed) +
                         " model=" + to_string(ds.model) + " n=" + std::to_string(ds.n()) +
                         " dX=" + std::to_string(ds.dx()) + " dY=" + std::to_string(ds.dy()) +
                         " dZ=" + std::to_string(ds.dz()));
    }
  }
  return logits;
}

template <typename T>
double AcidModel<T>::logit(const Dataset& ds) const {
  NoGradGuard no_grad;
  return static_cast<double>(forward(std::span<const Dataset>(&ds, 1)).item());
}

template <typename T>
std::vector<double> AcidModel<T>::logits(std::span<const Dataset> datasets, std::size_t threads) const {
  std::vector<double> out(datasets.size());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(datasets.size(), 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < datasets.size(); ++i) out[i] = logit(datasets[i]);
    return out;
  }
  // Parameters are only read during inference; each worker owns a stride.
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < datasets.size(); i += threads) out[i] = logit(datasets[i]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

template <typename T>
template <typename U>
AcidModel<U> AcidModel<T>::cast() const {
  ModelParams<U> converted = ModelParams<U>::allocate(config_);
  const auto src = params_.named();
  auto dst = converted.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto out = dst[i].second.mutable_data();
    const auto in = src[i].second.data();
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<U>(in[j]);
  }
  return AcidModel<U>(config_, std::move(converted));
}

#define ACID_INSTANTIATE_MODEL(T)                                                               \
  template struct FeedForward<T>;                                                               \
  template struct ModelParams<T>;                                                               \
  template class AcidModel<T>;                                                                  \
  template Tensor<T> attn(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                          const Tensor<T>&);                                                    \
  template Tensor<T> mha(const Tensor<T>&, const Tensor<T>&, const MultiHeadWeights<T>&);       \
  template Tensor<T> attention_block(const Tensor<T>&, const Tensor<T>&,                        \
                                     const AttentionBlockWeights<T>&, const ForwardContext&);   \
  template Encoded<T> stack_batch(std::span<const Dataset>);                                    \
  template Encoded<T> embed(const Encoded<T>&, const ModelParams<T>&);                          \
  template Encoded<T> layer_forward(const Encoded<T>&, const EncoderLayerWeights<T>&,           \
                                    const ForwardContext&);                                     \
  template Tensor<T> interdependence(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> summarize(const Tensor<T>&, const Tensor<T>&, const FeedForward<T>&,       \
                               std::size_t);

ACID_INSTANTIATE_MODEL(float)
ACID_INSTANTIATE_MODEL(double)

template AcidModel<float> AcidModel<float>::cast<float>() const;
template AcidModel<double> AcidModel<float>::cast<double>() const;
template AcidModel<float> AcidModel<double>::cast<float>() const;
template AcidModel<double> AcidModel<double>::cast<double>() const;

}  // namespace acid
