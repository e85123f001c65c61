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

// Helpers shared by the unit and acceptance suites: random tensors, a
// central finite-difference gradient checker and loop-based oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "acid/dataset.hpp"
#include "acid/model.hpp"
#include "acid/ops.hpp"
#include "acid/rng.hpp"
#include "acid/tensor.hpp"

namespace acid::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, RngStream& rng, double sd = 1.0, bool requires_grad = true) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
  return Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() of `loss_fn` against central differences for every
/// element of every input (or a strided subset when `max_per_input` is set).
inline GradCheck grad_check(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> inputs,
                            double h = 1e-5, std::size_t max_per_input = 0) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  GradCheck out;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.size(), 0.0);
    const std::size_t stride =
        (max_per_input == 0 || t.size() <= max_per_input) ? 1 : (t.size() + max_per_input - 1) / max_per_input;
    for (std::size_t i = 0; i < t.size(); i += stride) {
      auto data = t.mutable_data();
      const double keep = data[i];
      double up, down;
      {
        NoGradGuard ng;
        data[i] = keep + h;
        up = loss_fn().item();
        data[i] = keep - h;
        down = loss_fn().item();
      }
      data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      out.max_rel_err = std::max(out.max_rel_err, rel_err(analytic[i], numeric));
      ++out.checked;
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return out;
}

/// sum(out * w) for a fixed random w, so every output element matters.
inline Tensor<double> weighted_sum(const Tensor<double>& out, std::uint64_t seed) {
  RngStream rng(seed);
  return sum(mul(out, random_tensor(out.shape(), rng, 1.0, false)));
}

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor<double>& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = t.data()[offset + i * cols + j];
  return m;
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// softmax(q k^T / sqrt(e)) v written out loop by loop.
inline Mat attention_oracle(const Mat& q, const Mat& k, const Mat& v) {
  const double e = static_cast<double>(q[0].size());
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) d += q[i][c] * k[j][c];
      s[j] = d / std::sqrt(e);
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += s[j] / z * v[j][c];
  }
  return out;
}

/// Per-head loop: head i attends over (a wa_i) wq_i, (b wb_i) wk_i,
/// (b wb_i) wv_i; heads are concatenated and mixed by wh.
inline Mat mha_oracle(const Mat& a, const Mat& b, const MultiHeadWeights<double>& w) {
  const std::size_t h = w.wa.dim(0), da = w.wa.dim(1), db = w.wb.dim(1), e = w.wq.dim(-1);
  Mat concat(a.size());
  for (std::size_t i = 0; i < h; ++i) {
    const Mat ai = mat_mul(a, to_mat(w.wa, i * da * e, da, e));
    const Mat bi = mat_mul(b, to_mat(w.wb, i * db * e, db, e));
    const Mat q = mat_mul(ai, to_mat(w.wq, i * e * e, e, e));
    const Mat k = mat_mul(bi, to_mat(w.wk, i * e * e, e, e));
    const Mat v = mat_mul(bi, to_mat(w.wv, i * e * e, e, e));
    const Mat o = attention_oracle(q, k, v);
    for (std::size_t r = 0; r < a.size(); ++r) concat[r].insert(concat[r].end(), o[r].begin(), o[r].end());
  }
  return mat_mul(concat, to_mat(w.wh, 0, h * e, w.wh.dim(-1)));
}

/// R[b, r] = max_{i,j} mean_o (sum_c xt[b,o,i,r,c] yt[b,o,j,r,c])^2, by loops.
inline std::vector<double> summary_oracle(const Tensor<double>& xt, const Tensor<double>& yt) {
  const std::size_t B = xt.dim(0), n = xt.dim(1), dx = xt.dim(2), h = xt.dim(3), e = xt.dim(4), dy = yt.dim(2);
  auto X = [&](std::size_t b, std::size_t o, std::size_t i, std::size_t r, std::size_t c) {
    return xt.data()[(((b * n + o) * dx + i) * h + r) * e + c];
  };
  auto Y = [&](std::size_t b, std::size_t o, std::size_t j, std::size_t r, std::size_t c) {
    return yt.data()[(((b * n + o) * dy + j) * h + r) * e + c];
  };
  std::vector<double> out(B * h, -1.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t i = 0; i < dx; ++i)
        for (std::size_t j = 0; j < dy; ++j) {
          double m = 0.0;
          for (std::size_t o = 0; o < n; ++o) {
            double d = 0.0;
            for (std::size_t c = 0; c < e; ++c) d += X(b, o, i, r, c) * Y(b, o, j, r, c);
            m += d * d;
          }
          out[b * h + r] = std::max(out[b * h + r], m / static_cast<double>(n));
        }
  return out;
}

/// Bias-corrected Adam on one scalar, written independently of the library.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return w - lr * mh / (std::sqrt(vh) + eps);
  }
};

/// AUC by counting every (positive, negative) pair; ties score one half.
inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

}  // namespace acid::testing

namespace acid::testing {

/// Adds N(0, sd^2) noise to every parameter so no branch starts at zero.
template <typename T>
void perturb(ModelParams<T>& params, std::uint64_t seed, double sd = 0.1) {
  RngStream rng(seed);
  for (auto& [name, t] : params.named())
    for (auto& v : t.mutable_data()) v += static_cast<T>(rng.normal(0.0, sd));
}

/// Reorders columns of a matrix.
inline DataMatrix permute_cols(const DataMatrix& m, const std::vector<std::size_t>& order) {
  DataMatrix out(m.rows(), m.cols());
  for (std::size_t c = 0; c < order.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(order[c]);
  return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace acid::testing

namespace acid::testing {

/// Skew-normal draws via the half-normal construction
/// xi + omega * (delta |u0| + sqrt(1 - delta^2) u1), delta = a / sqrt(1 + a^2).
inline std::vector<double> skew_normal_draws(std::size_t count, double xi, double omega, double a,
                                             std::uint64_t seed) {
  RngStream rng(seed);
  const double delta = a / std::sqrt(1.0 + a * a);
  std::vector<double> out(count);
  for (auto& x : out) {
    const double u0 = rng.normal(), u1 = rng.normal();
    x = xi + omega * (delta * std::abs(u0) + std::sqrt(1.0 - delta * delta) * u1);
  }
  return out;
}

}  // namespace acid::testing
