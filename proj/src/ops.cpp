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

#include "acid/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "acid/errors.hpp"

namespace acid {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

}  // namespace

// ---------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                          shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t n = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], m = sb.back();
  if (k != kb) throw mismatch();
  const Shape lead_a(sa.begin(), sa.end() - 2);
  const Shape lead_b(sb.begin(), sb.end() - 2);

  enum class Mode { SharedRhs, SharedLhs, Batched } mode;
  Shape out_shape;
  if (lead_b.empty()) {
    mode = Mode::SharedRhs;
    out_shape = lead_a;
  } else if (lead_a.empty()) {
    mode = Mode::SharedLhs;
    out_shape = lead_b;
  } else if (lead_a == lead_b) {
    mode = Mode::Batched;
    out_shape = lead_a;
  } else {
    throw mismatch();
  }
  out_shape.push_back(n);
  out_shape.push_back(m);
  const std::size_t batch = numel(out_shape) / (n * m);

  Buffer<T> out(numel(out_shape));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (mode == Mode::SharedRhs) {
    MMap<T>(out.data(), batch * n, m).noalias() = CMap<T>(pa, batch * n, k) * CMap<T>(pb, k, m);
  } else {
    const std::size_t stride_a = mode == Mode::SharedLhs ? 0 : n * k;
    for (std::size_t i = 0; i < batch; ++i) {
      MMap<T>(out.data() + i * n * m, n, m).noalias() =
          CMap<T>(pa + i * stride_a, n, k) * CMap<T>(pb + i * k * m, k, m);
    }
  }

  return detail::make_result<T>(
      std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
      [mode, batch, n, k, m](Node<T>& self) {
        Node<T>& na = *self.parents[0];
        Node<T>& nb = *self.parents[1];
        const T* g = self.grad.data();
        if (mode == Mode::SharedRhs) {
          if (na.requires_grad) {
            MMap<T>(na.ensure_grad(), batch * n, k).noalias() +=
                CMap<T>(g, batch * n, m) * CMap<T>(nb.value.data(), k, m).transpose();
          }
          if (nb.requires_grad) {
            MMap<T>(nb.ensure_grad(), k, m).noalias() +=
                CMap<T>(na.value.data(), batch * n, k).transpose() * CMap<T>(g, batch * n, m);
          }
          return;
        }
        const std::size_t stride_a = mode == Mode::SharedLhs ? 0 : n * k;
        for (std::size_t i = 0; i < batch; ++i) {
          CMap<T> gi(g + i * n * m, n, m);
          if (na.requires_grad) {
            MMap<T>(na.ensure_grad() + i * stride_a, n, k).noalias() +=
                gi * CMap<T>(nb.value.data() + i * k * m, k, m).transpose();
          }
          if (nb.requires_grad) {
            MMap<T>(nb.ensure_grad() + i * k * m, k, m).noalias() +=
                CMap<T>(na.value.data() + i * stride_a, n, k).transpose() * gi;
          }
        }
      });
}

// ------------------------------------------------------- layout changes

namespace {

/// Calls fn(out_index, in_offset) for every element of the permuted view.
template <typename Fn>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& axes, Fn&& fn) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  const std::size_t total = numel(in_shape);
  if (total == 0) return;
  if (r == 0) {
    fn(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t last_len = out_shape[r - 1];
  const std::size_t last_stride = stride[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t base = 0;
  for (std::size_t out = 0; out < total; out += last_len) {
    for (std::size_t j = 0; j < last_len; ++j) fn(out + j, base + j * last_stride);
    // advance the odometer over all but the last axis
    for (std::size_t ax = r - 1; ax-- > 0;) {
      base += stride[ax];
      if (++idx[ax] < out_shape[ax]) break;
      base -= stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  if (axes.size() != s.size()) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                         shape_str(s));
  }
  std::vector<bool> seen(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= s.size() || seen[axes[i]]) {
      throw DimensionError("permute: invalid axis order for shape " + shape_str(s));
    }
    seen[axes[i]] = true;
    out_shape[i] = s[axes[i]];
  }
  Buffer<T> out(x.size());
  const T* in = x.data().data();
  for_each_permuted(s, axes, [&](std::size_t o, std::size_t i) { out[o] = in[i]; });
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node_ptr()},
                                [axes](Node<T>& self) {
                                  Node<T>& p = *self.parents[0];
                                  T* g = p.ensure_grad();
                                  const T* go = self.grad.data();
                                  for_each_permuted(p.shape, axes, [&](std::size_t o, std::size_t i) {
                                    g[i] += go[o];
                                  });
                                });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Buffer<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x.node_ptr()},
                                [](Node<T>& self) {
                                  Node<T>& p = *self.parents[0];
                                  T* g = p.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                });
}

// ----------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Buffer<T> out(a.size());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](Node<T>& self) {
                                  for (auto& p : self.parents) {
                                    if (!p->requires_grad) continue;
                                    T* g = p->ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Buffer<T> out(a.size());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](Node<T>& self) {
                                  const T sign[2] = {T(1), T(-1)};
                                  for (std::size_t j = 0; j < 2; ++j) {
                                    Node<T>& p = *self.parents[j];
                                    if (!p.requires_grad) continue;
                                    T* g = p.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sign[j] * self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Buffer<T> out(a.size());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](Node<T>& self) {
                                  Node<T>& na = *self.parents[0];
                                  Node<T>& nb = *self.parents[1];
                                  if (na.requires_grad) {
                                    T* g = na.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * nb.value[i];
                                  }
                                  if (nb.requires_grad) {
                                    T* g = nb.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * na.value[i];
                                  }
                                });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || bias.size() != x.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  const std::size_t d = bias.size();
  const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
  Buffer<T> out(x.size());
  const T* px = x.data().data();
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] + pb[j];
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()},
                                [rows, d](Node<T>& self) {
                                  Node<T>& nx = *self.parents[0];
                                  Node<T>& nb = *self.parents[1];
                                  const T* go = self.grad.data();
                                  if (nx.requires_grad) {
                                    T* g = nx.ensure_grad();
                                    for (std::size_t i = 0; i < rows * d; ++i) g[i] += go[i];
                                  }
                                  if (nb.requires_grad) {
                                    T* g = nb.ensure_grad();
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t j = 0; j < d; ++j) g[j] += go[r * d + j];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Buffer<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * factor;
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()},
                                [factor](Node<T>& self) {
                                  T* g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
                                });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * px[i];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += T(2) * p.value[i] * self.grad[i];
  });
}

template <typename T>
Tensor<T> log1p(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(px[i] > T(-1))) throw ContractError("log1p: input must exceed -1");
    out[i] = std::log1p(px[i]);
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / (T(1) + p.value[i]);
  });
}

namespace {
thread_local BranchTrace* active_trace = nullptr;
}  // namespace

BranchTrace::BranchTrace() : previous_(active_trace) { active_trace = this; }
BranchTrace::~BranchTrace() { active_trace = previous_; }

void BranchTrace::record(std::uint64_t v) {
  if (active_trace) active_trace->hash_ = mix64(active_trace->hash_ ^ v) + 0x9E3779B97F4A7C15ull;
}

bool BranchTrace::active() { return active_trace != nullptr; }

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > T(0) ? px[i] : T(0);
  if (BranchTrace::active()) {
    for (std::size_t i = 0; i < out.size(); ++i) BranchTrace::record(px[i] > T(0));
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

// ------------------------------------------------------------ reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>({}, {total}, {x.node_ptr()}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.ensure_grad();
    const T go = self.grad[0];
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += go;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const std::size_t a = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_axis(x.shape(), a);
  if (s.len == 0) throw DimensionError("mean_axis over empty axis of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(a));
  Buffer<T> out(s.outer * s.inner, T(0));
  const T* px = x.data().data();
  const T inv = T(1) / static_cast<T>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    T* dst = out.data() + o * s.inner;
    for (std::size_t l = 0; l < s.len; ++l) {
      const T* src = px + (o * s.len + l) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < s.inner; ++i) dst[i] *= inv;
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node_ptr()},
                                [s, inv](Node<T>& self) {
                                  T* g = self.parents[0]->ensure_grad();
                                  const T* go = self.grad.data();
                                  for (std::size_t o = 0; o < s.outer; ++o) {
                                    for (std::size_t l = 0; l < s.len; ++l) {
                                      T* dst = g + (o * s.len + l) * s.inner;
                                      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += inv * go[o * s.inner + i];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, int axis) {
  const std::size_t a = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_axis(x.shape(), a);
  if (s.len == 0) throw DimensionError("max_axis over empty axis of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(a));
  Buffer<T> out(s.outer * s.inner);
  std::vector<std::size_t> argmax(out.size());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.len * s.inner + i;
      for (std::size_t l = 1; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        if (px[idx] > px[best]) best = idx;
      }
      out[o * s.inner + i] = px[best];
      argmax[o * s.inner + i] = best;
    }
  }
  if (BranchTrace::active()) {
    for (std::size_t j : argmax) BranchTrace::record(j);
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), {x.node_ptr()},
                                [argmax = std::move(argmax)](Node<T>& self) {
                                  T* g = self.parents[0]->ensure_grad();
                                  for (std::size_t j = 0; j < argmax.size(); ++j) g[argmax[j]] += self.grad[j];
                                });
}

// --------------------------------------------------- softmax & layer norm

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t a = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_axis(x.shape(), a);
  const T* px = x.data().data();
  Buffer<T> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) {
        const T v = px[base + l * s.inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      T total = T(0);
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(px[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= total;
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [s](Node<T>& self) {
    T* g = self.parents[0]->ensure_grad();
    const T* y = self.value.data();
    const T* gy = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T dot = T(0);
        for (std::size_t l = 0; l < s.len; ++l) dot += gy[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = base + l * s.inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, int axis,
                     double eps) {
  const std::size_t a = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_axis(x.shape(), a);
  if (gain.shape() != Shape{s.len} || bias.shape() != Shape{s.len}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " must be [" + std::to_string(s.len) + "]");
  }
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  Buffer<T> out(x.size());
  Buffer<T> xhat(x.size());
  Buffer<T> inv_std(s.outer * s.inner);
  const T inv_len = T(1) / static_cast<T>(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mu = T(0);
      for (std::size_t l = 0; l < s.len; ++l) mu += px[base + l * s.inner];
      mu *= inv_len;
      T var = T(0);
      for (std::size_t l = 0; l < s.len; ++l) {
        const T d = px[base + l * s.inner] - mu;
        var += d * d;
      }
      var *= inv_len;
      const T r = T(1) / std::sqrt(var + static_cast<T>(eps));
      inv_std[o * s.inner + i] = r;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = base + l * s.inner;
        xhat[idx] = (px[idx] - mu) * r;
        out[idx] = xhat[idx] * pg[l] + pb[l];
      }
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [s, inv_len, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        Node<T>& nx = *self.parents[0];
        Node<T>& ng = *self.parents[1];
        Node<T>& nb = *self.parents[2];
        const T* gy = self.grad.data();
        const T* pg = ng.value.data();
        T* gx = nx.requires_grad ? nx.ensure_grad() : nullptr;
        T* gg = ng.requires_grad ? ng.ensure_grad() : nullptr;
        T* gb = nb.requires_grad ? nb.ensure_grad() : nullptr;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.len * s.inner + i;
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t l = 0; l < s.len; ++l) {
              const std::size_t idx = base + l * s.inner;
              const T d = gy[idx] * pg[l];
              mean_d += d;
              mean_dx += d * xhat[idx];
              if (gg) gg[l] += gy[idx] * xhat[idx];
              if (gb) gb[l] += gy[idx];
            }
            if (!gx) continue;
            mean_d *= inv_len;
            mean_dx *= inv_len;
            const T r = inv_std[o * s.inner + i];
            for (std::size_t l = 0; l < s.len; ++l) {
              const std::size_t idx = base + l * s.inner;
              gx[idx] += r * (gy[idx] * pg[l] - mean_d - xhat[idx] * mean_dx);
            }
          }
        }
      });
}

// --------------------------------------------------------------- dropout

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Buffer<T> mask(x.size());
  Buffer<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = px[i] * mask[i];
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()},
                                [mask = std::move(mask)](Node<T>& self) {
                                  T* g = self.parents[0]->ensure_grad();
                                  for (std::size_t i = 0; i < mask.size(); ++i) g[i] += mask[i] * self.grad[i];
                                });
}

// ------------------------------------------------------------- attention

namespace {

template <typename T>
using SMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CSMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Below this many scores per head, coefficient-wise products beat GEMM setup.
constexpr std::size_t kSmallAttention = 256;

}  // namespace

template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              std::size_t heads, T scale_factor) {
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  const Shape& sv = v.shape();
  auto mismatch = [&] {
    return DimensionError("attention: incompatible shapes q" + shape_str(sq) + " k" +
                          shape_str(sk) + " v" + shape_str(sv) + " for " +
                          std::to_string(heads) + " heads");
  };
  if (heads == 0 || sq.size() < 2 || sk.size() < 2 || sv.size() < 2) throw mismatch();
  const std::size_t la = sq[sq.size() - 2], hd = sq.back();
  const std::size_t lb = sk[sk.size() - 2];
  const std::size_t hdv = sv.back();
  if (sk.back() != hd || sv[sv.size() - 2] != lb || hd % heads != 0 || hdv % heads != 0) {
    throw mismatch();
  }
  const std::size_t batch = numel(Shape(sq.begin(), sq.end() - 2));
  if (numel(Shape(sk.begin(), sk.end() - 2)) != batch ||
      numel(Shape(sv.begin(), sv.end() - 2)) != batch) {
    throw mismatch();
  }
  const std::size_t d = hd / heads, dv = hdv / heads;

  Shape out_shape = sq;
  out_shape.back() = hdv;
  Buffer<T> out(batch * la * hdv);
  const bool keep_probs = grad_enabled() &&
                          (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Buffer<T> probs(keep_probs ? batch * heads * la * lb : 0);
  RowMat<T> scratch(la, lb);
  const bool small = la * lb <= kSmallAttention;
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      MMap<T> p(keep_probs ? probs.data() + (b * heads + h) * la * lb : scratch.data(), la, lb);
      CSMap<T> qm(pq + b * la * hd + h * d, la, d, Eigen::OuterStride<>(hd));
      CSMap<T> km(pk + b * lb * hd + h * d, lb, d, Eigen::OuterStride<>(hd));
      CSMap<T> vm(pv + b * lb * hdv + h * dv, lb, dv, Eigen::OuterStride<>(hdv));
      SMap<T> om(out.data() + b * la * hdv + h * dv, la, dv, Eigen::OuterStride<>(hdv));
      if (small) {
        p.noalias() = qm.lazyProduct(km.transpose());
      } else {
        p.noalias() = qm * km.transpose();
      }
      p *= scale_factor;
      for (std::size_t i = 0; i < la; ++i) {
        auto row = p.row(static_cast<Eigen::Index>(i));
        const T mx = row.maxCoeff();
        if (std::isnan(mx)) throw NumericError("attention: NaN score");
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      if (small) {
        om.noalias() = p.lazyProduct(vm);
      } else {
        om.noalias() = p * vm;
      }
    }
  }

  return detail::make_result<T>(
      std::move(out_shape), std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()},
      [batch, heads, la, lb, d, dv, hd, hdv, scale_factor, probs = std::move(probs)](Node<T>& self) {
        Node<T>& nq = *self.parents[0];
        Node<T>& nk = *self.parents[1];
        Node<T>& nv = *self.parents[2];
        T* gq = nq.requires_grad ? nq.ensure_grad() : nullptr;
        T* gk = nk.requires_grad ? nk.ensure_grad() : nullptr;
        T* gv = nv.requires_grad ? nv.ensure_grad() : nullptr;
        RowMat<T> dp(la, lb);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            CMap<T> p(probs.data() + (b * heads + h) * la * lb, la, lb);
            CSMap<T> go(self.grad.data() + b * la * hdv + h * dv, la, dv, Eigen::OuterStride<>(hdv));
            if (gv) {
              SMap<T>(gv + b * lb * hdv + h * dv, lb, dv, Eigen::OuterStride<>(hdv)).noalias() +=
                  p.transpose() * go;
            }
            if (!gq && !gk) continue;
            CSMap<T> vm(nv.value.data() + b * lb * hdv + h * dv, lb, dv, Eigen::OuterStride<>(hdv));
            dp.noalias() = go * vm.transpose();
            // softmax Jacobian, folded with the score scale
            for (std::size_t i = 0; i < la; ++i) {
              const auto r = static_cast<Eigen::Index>(i);
              const T dot = dp.row(r).dot(p.row(r));
              dp.row(r) = scale_factor * (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
            }
            if (gq) {
              CSMap<T> km(nk.value.data() + b * lb * hd + h * d, lb, d, Eigen::OuterStride<>(hd));
              SMap<T>(gq + b * la * hd + h * d, la, d, Eigen::OuterStride<>(hd)).noalias() += dp * km;
            }
            if (gk) {
              CSMap<T> qm(nq.value.data() + b * la * hd + h * d, la, d, Eigen::OuterStride<>(hd));
              SMap<T>(gk + b * lb * hd + h * d, lb, d, Eigen::OuterStride<>(hd)).noalias() +=
                  dp.transpose() * qm;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               T scale_factor) {
  if (q.rank() != k.rank() || q.rank() != v.rank() || q.rank() < 2 ||
      !std::equal(q.shape().begin(), q.shape().end() - 2, k.shape().begin()) ||
      !std::equal(q.shape().begin(), q.shape().end() - 2, v.shape().begin())) {
    throw DimensionError("attention: incompatible shapes q" + shape_str(q.shape()) + " k" +
                         shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  return multihead_attention(q, k, v, 1, scale_factor);
}

// --------------------------------------------------------- instantiation

#define ACID_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> square(const Tensor<T>&);                                               \
  template Tensor<T> log1p(const Tensor<T>&);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                       \
  template Tensor<T> max_axis(const Tensor<T>&, int);                                        \
  template Tensor<T> softmax(const Tensor<T>&, int);                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                                double);                                                     \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, RngStream&);                    \
  template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&,                \
                                          const Tensor<T>&, T);                                \
  template Tensor<T> multihead_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         std::size_t, T);

ACID_INSTANTIATE_OPS(float)
ACID_INSTANTIATE_OPS(double)

}  // namespace acid
