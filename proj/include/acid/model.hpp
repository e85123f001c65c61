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

#include <json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acid/dataset.hpp"
#include "acid/ops.hpp"
#include "acid/rng.hpp"
#include "acid/tensor.hpp"

namespace acid {

/// Architecture hyperparameters. `heads` is both the attention head count
/// and the number of inter-dependence heads in the summary.
struct ModelConfig {
  std::size_t e = 32;
  std::size_t heads = 8;
  std::size_t layers = 4;
  double dropout = 0.1;
  std::size_t ffn_hidden = 2;  // FFN hidden width = ffn_hidden * e
  std::size_t classifier_hidden = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Position-wise two-layer network: relu(x W1 + b1) W2 + b2 on the last axis.
template <typename T>
struct FeedForward {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Weights of one multi-head attention. Every head has full width e.
///   wa: [h, dA, e]   wb: [h, dB, e]        (input projections per head)
///   wq, wk, wv: [h, e, e]                  (per-head query/key/value maps)
///   wh: [h*e, e]                           (head mixer)
template <typename T>
struct MultiHeadWeights {
  Tensor<T> wa, wb, wq, wk, wv, wh;
  std::size_t heads() const { return wa.dim(0); }
};

/// Full attention block: multi-head attention, a residual projection, layer
/// norm and a position-wise FFN.
template <typename T>
struct AttentionBlockWeights {
  MultiHeadWeights<T> mha;
  Tensor<T> residual;  // [dA, e]
  Tensor<T> ln_gain, ln_bias;
  FeedForward<T> ffn;
};

template <typename T>
struct EncoderLayerWeights {
  AttentionBlockWeights<T> sod_xy, sod_z, cod, sos_xy, sos_z;
  FeedForward<T> ffn_xy, ffn_z;
};

/// All learnable tensors. X and Y share every tensor they touch.
template <typename T>
struct ModelParams {
  FeedForward<T> emb_xy, emb_z;
  std::vector<EncoderLayerWeights<T>> layers;
  FeedForward<T> summary;     // e -> heads * e
  FeedForward<T> classifier;  // heads -> classifier_hidden -> 1

  /// Zero-filled tensors of the right shapes, all requiring gradients.
  static ModelParams allocate(const ModelConfig& config);
  /// Xavier-uniform weights, zero biases, unit layer-norm gains. The
  /// classifier output layer starts at zero so initial logits are 0.
  static ModelParams initialize(const ModelConfig& config, RngStream& rng);

  /// Stable ordered manifest of (name, tensor). Handles alias the parameters.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::size_t count() const;
};

/// Dropout settings threaded through a forward pass.
struct ForwardContext {
  double dropout = 0.0;
  bool training = false;
  RngStream* rng = nullptr;
};

/// Scaled dot-product attention of rows of `a` over rows of `b`:
/// softmax((a wq)(b wk)^T / sqrt(e)) (b wv).
/// a: [..., n, dA], b: [..., m, dB], wq: [dA, e], wk/wv: [dB, e].
template <typename T>
Tensor<T> attn(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& wq,
               const Tensor<T>& wk, const Tensor<T>& wv);

/// concat(H_1..H_h) wh with H_i = attn(a wa_i, b wb_i) using head i's maps.
/// a: [..., n, dA], b: [..., m, dB] -> [..., n, e]
template <typename T>
Tensor<T> mha(const Tensor<T>& a, const Tensor<T>& b, const MultiHeadWeights<T>& w);

/// ir  = LN(a R + Dropout(mha(a, b)))
/// out = a R + Dropout(FFN(ir))
template <typename T>
Tensor<T> attention_block(const Tensor<T>& a, const Tensor<T>& b,
                          const AttentionBlockWeights<T>& w, const ForwardContext& ctx);

/// Per-variable representations, each [B, n, d, e].
template <typename T>
struct Encoded {
  Tensor<T> x, y, z;
};

/// Stacks same-shaped datasets into raw [B, n, d, 1] tensors.
template <typename T>
Encoded<T> stack_batch(std::span<const Dataset> batch);

/// Scalar-to-vector entry embeddings (Emb_XY on X and Y, Emb_Z on Z).
template <typename T>
Encoded<T> embed(const Encoded<T>& raw, const ModelParams<T>& params);

/// One encoder layer: self-attention over dimensions within each sample,
/// cross-attention from Z into X and Y, self-attention over samples within
/// each column, summed with the input and passed through the layer FFN.
template <typename T>
Encoded<T> layer_forward(const Encoded<T>& in, const EncoderLayerWeights<T>& w,
                         const ForwardContext& ctx);

/// R_r = max_{i,j} mean_o (sum_c xt[o,i,r,c] yt[o,j,r,c])^2.
/// xt: [B, n, dX, h, e], yt: [B, n, dY, h, e] -> [B, h]
template <typename T>
Tensor<T> interdependence(const Tensor<T>& xt, const Tensor<T>& yt);

/// Summary FFN to h inter-dependence heads followed by interdependence().
template <typename T>
Tensor<T> summarize(const Tensor<T>& x, const Tensor<T>& y, const FeedForward<T>& summary,
                    std::size_t heads);

/// Whole-dataset classifier. Forward passes are read-only on the
/// parameters and may run concurrently under NoGradGuard.
template <typename T>
class AcidModel {
 public:
  AcidModel(ModelConfig config, ModelParams<T> params);
  static AcidModel initialize(const ModelConfig& config, std::uint64_t seed);

  /// Logits [B] for datasets that share (n, dX, dY, dZ). Throws
  /// DimensionError on mixed shapes and NumericError, naming the dataset,
  /// when a logit is not finite.
  Tensor<T> forward(std::span<const Dataset> batch, bool training = false,
                    RngStream* rng = nullptr) const;

  /// Inference-mode logit of one dataset (no graph recorded).
  double logit(const Dataset& ds) const;
  /// Inference-mode logits, spread over `threads` workers.
  std::vector<double> logits(std::span<const Dataset> datasets, std::size_t threads = 1) const;

  const ModelConfig& config() const { return config_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  /// Converts parameters to another floating-point width.
  template <typename U>
  AcidModel<U> cast() const;

 private:
  ModelConfig config_;
  ModelParams<T> params_;
};

}  // namespace acid
