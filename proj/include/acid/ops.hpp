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

#include <vector>

#include "acid/rng.hpp"
#include "acid/tensor.hpp"

namespace acid {

/// Batched matrix product a[..., n, k] x b[..., k, m] -> [..., n, m]. Leading
/// axes must be equal, or one operand must be a plain matrix that is shared
/// across the other's batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., d] + bias[d]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> square(const Tensor<T>& x);
/// Elementwise log(1 + x); throws ContractError unless x > -1.
template <typename T>
Tensor<T> log1p(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// While alive, relu and max_axis on this thread fold the branch each element
/// takes (sign, argmax) into a fingerprint. Two evaluations with equal
/// fingerprints lie on the same smooth piece of the function.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }

  /// Folds v into the active trace, if any.
  static void record(std::uint64_t v);
  static bool active();

 private:
  BranchTrace* previous_;
  std::uint64_t hash_ = 0;
};

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean over one axis; that axis is removed from the shape.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis);

/// Max over one axis; the gradient flows to the first maximal element.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, int axis);

/// Numerically stable softmax along `axis`. Throws NumericError on NaN input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Normalizes along `axis` with population variance, then applies gain and
/// bias (both shaped [dim(axis)]). A constant slice maps to `bias`.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     int axis, double eps = 1e-5);

/// Inverted dropout: during training each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity otherwise.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, RngStream& rng);

/// softmax(scale * q k^T) v over matching leading axes.
/// q: [..., la, d], k: [..., lb, d], v: [..., lb, dv] -> [..., la, dv]
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               T scale);

/// `heads` independent scaled dot-product attentions whose inputs are packed
/// along the last axis: head i reads columns [i*d, (i+1)*d) of q and k and
/// [i*dv, (i+1)*dv) of v, and writes the same slot of the output.
/// q: [..., la, heads*d], k: [..., lb, heads*d], v: [..., lb, heads*dv]
/// -> [..., la, heads*dv]. Leading axes of k and v may differ in shape from
/// q's but must hold the same number of slices.
template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              std::size_t heads, T scale);

}  // namespace acid
