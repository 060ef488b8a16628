// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nutime/errors.hpp"
#include "nutime/parallel.hpp"

namespace nutime::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstStrided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr std::size_t kRowGrain = 64;

// C[m x n] (+)= op(A) * op(B), row-major. op(A) is m x k.
template <typename T>
void gemm(const T* a, bool trans_a, const T* b, bool trans_b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
  const Eigen::Index mi = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k),
                     ni = static_cast<Eigen::Index>(n);
  parallel_for(m, kRowGrain, [&](std::size_t r0, std::size_t r1) {
    const Eigen::Index rb = static_cast<Eigen::Index>(r0), rn = static_cast<Eigen::Index>(r1 - r0);
    MutMap<T> cm(c + r0 * n, rn, ni);
    auto run = [&](const auto& lhs) {
      if (trans_b) {
        ConstMap<T> bm(b, ni, ki);
        if (accumulate) cm.noalias() += lhs * bm.transpose();
        else cm.noalias() = lhs * bm.transpose();
      } else {
        ConstMap<T> bm(b, ki, ni);
        if (accumulate) cm.noalias() += lhs * bm;
        else cm.noalias() = lhs * bm;
      }
    };
    if (trans_a) {
      ConstMap<T> am(a, ki, mi);
      run(am.middleCols(rb, rn).transpose());
    } else {
      ConstMap<T> am(a, mi, ki);
      run(am.middleRows(rb, rn));
    }
  });
}

// Broadcast bookkeeping: strides of each operand aligned to the output rank,
// zero along broadcast dimensions.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;
  bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t src = s.size() - 1 - i;
    const std::size_t dst = r - 1 - i;
    strides[dst] = s[src] == 1 ? 0 : stride;
    stride *= s[src];
  }
  return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw UsageError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[r - 1 - i] = std::max(da, db);
  }
  p.sa = aligned_strides(a, p.out);
  p.sb = aligned_strides(b, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * idx[d];
      ib -= p.sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <typename T>
const T* val(const Node<T>& n, std::size_t i) {
  return n.parents[i]->value.data().data();
}

template <typename T>
T* gbuf(Node<T>& n, std::size_t i) {
  return n.parents[i]->grad_buffer();
}

void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw UsageError(std::string(op) + ": expected a matrix, got " + shape_str(s));
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw UsageError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(a);
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto p = plan_broadcast(a.shape(), b.shape(), "add");
  Tensor<T> out(p.out);
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  T* o = out.data().data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] + bv[ib]; });
  return make_result<T>(std::move(out), {a, b}, [p](Node<T>& n) {
    const T* g = n.grad.data().data();
    T* ga = gbuf(n, 0);
    T* gb = gbuf(n, 1);
    for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i];
      if (gb) gb[ib] += g[i];
    });
  }, "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto p = plan_broadcast(a.shape(), b.shape(), "sub");
  Tensor<T> out(p.out);
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  T* o = out.data().data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] - bv[ib]; });
  return make_result<T>(std::move(out), {a, b}, [p](Node<T>& n) {
    const T* g = n.grad.data().data();
    T* ga = gbuf(n, 0);
    T* gb = gbuf(n, 1);
    for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i];
      if (gb) gb[ib] -= g[i];
    });
  }, "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto p = plan_broadcast(a.shape(), b.shape(), "mul");
  Tensor<T> out(p.out);
  const T* av = a.value().data().data();
  const T* bv = b.value().data().data();
  T* o = out.data().data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] * bv[ib]; });
  return make_result<T>(std::move(out), {a, b}, [p](Node<T>& n) {
    const T* g = n.grad.data().data();
    const T* av = val(n, 0);
    const T* bv = val(n, 1);
    T* ga = gbuf(n, 0);
    T* gb = gbuf(n, 1);
    for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[i] * bv[ib];
      if (gb) gb[ib] += g[i] * av[ia];
    });
  }, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& x, double s) {
  Tensor<T> out(x.shape());
  const T f = static_cast<T>(s);
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * f;
  return make_result<T>(std::move(out), {x}, [f](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
  }, "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double s) {
  Tensor<T> out(x.shape());
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + static_cast<T>(s);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "add_scalar");
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank2(a.shape(), "matmul");
  require_rank2(b.shape(), "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw UsageError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out(Shape{m, n});
  gemm(a.value().data().data(), false, b.value().data().data(), false, out.data().data(), m, k, n, false);
  return make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& node) {
    const T* g = node.grad.data().data();
    if (T* ga = gbuf(node, 0)) gemm(g, false, val(node, 1), true, ga, m, n, k, true);
    if (T* gb = gbuf(node, 1)) gemm(val(node, 0), true, g, false, gb, k, m, n, true);
  }, "matmul");
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  require_rank2(w.shape(), "linear");
  if (x.shape().empty()) throw UsageError("linear: input must have rank >= 1");
  const std::size_t k = w.shape()[0], n = w.shape()[1];
  if (x.shape().back() != k) {
    throw UsageError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && bias.value().size() != n) throw UsageError("linear: bias size mismatch");
  const std::size_t m = x.value().size() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  T* o = out.data().data();
  gemm(x.value().data().data(), false, w.value().data().data(), false, o, m, k, n, false);
  if (has_bias) {
    const T* bv = bias.value().data().data();
    for (std::size_t r = 0; r < m; ++r) {
      T* row = o + r * n;
      for (std::size_t c = 0; c < n; ++c) row[c] += bv[c];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [m, k, n, has_bias](Node<T>& node) {
    const T* g = node.grad.data().data();
    if (T* gx = gbuf(node, 0)) gemm(g, false, val(node, 1), true, gx, m, n, k, true);
    if (T* gw = gbuf(node, 1)) gemm(val(node, 0), true, g, false, gw, k, m, n, true);
    if (has_bias) {
      if (T* gb = gbuf(node, 2)) {
        for (std::size_t r = 0; r < m; ++r) {
          const T* row = g + r * n;
          for (std::size_t c = 0; c < n; ++c) gb[c] += row[c];
        }
      }
    }
  }, "linear");
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  require_rank2(x.shape(), "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor<T> out(Shape{c, r});
  const T* xv = x.value().data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_result<T>(std::move(out), {x}, [r, c](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  }, "transpose");
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_numel(shape) != x.value().size()) {
    throw UsageError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return make_result<T>(x.value().reshaped(std::move(shape)), {x}, [](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

template <typename T>
Var<T> broadcast_to(const Var<T>& x, const Shape& shape) {
  auto p = plan_broadcast(x.shape(), shape, "broadcast_to");
  if (p.out != shape) throw UsageError("broadcast_to: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor<T> out(shape);
  const T* xv = x.value().data().data();
  T* o = out.data().data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = xv[ia]; });
  return make_result<T>(std::move(out), {x}, [p](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t) { gx[ia] += g[i]; });
  }, "broadcast_to");
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == ax || s[d] == first[d];
    if (!ok) throw UsageError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    widths.push_back(s[ax] * inner);
    total += s[ax];
  }
  Shape out_shape = first;
  out_shape[ax] = total;
  Tensor<T> out(out_shape);
  const std::size_t row = total * inner;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const T* src = parts[i].value().data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[i], widths[i], out.data().data() + o * row + offset);
    }
    offset += widths[i];
  }
  return make_result<T>(std::move(out), parts, [widths, outer, row](Node<T>& n) {
    const T* g = n.grad.data().data();
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (T* gp = gbuf(n, i)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g + o * row + off;
          T* dst = gp + o * widths[i];
          for (std::size_t j = 0; j < widths[i]; ++j) dst[j] += src[j];
        }
      }
      off += widths[i];
    }
  }, "concat");
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size(), "slice");
  if (begin >= end || end > s[ax]) throw UsageError("slice: range out of bounds for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t width = (end - begin) * inner, row = s[ax] * inner, off = begin * inner;
  const T* xv = x.value().data().data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv + o * row + off, width, out.data().data() + o * width);
  return make_result<T>(std::move(out), {x}, [outer, width, row, off](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < width; ++j) gx[o * row + off + j] += g[o * width + j];
    }
  }, "slice");
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += v;
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {x}, [](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T g = n.grad[0];
    const std::size_t sz = n.parents[0]->value.size();
    for (std::size_t i = 0; i < sz; ++i) gx[i] += g;
  }, "sum");
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

template <typename T>
Var<T> sum_last(const Var<T>& x) {
  if (x.shape().empty()) throw UsageError("sum_last: scalar input");
  const std::size_t d = x.shape().back(), rows = x.value().size() / d;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor<T> out(out_shape);
  const T* xv = x.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += xv[r * d + c];
    out[r] = static_cast<T>(acc);
  }
  return make_result<T>(std::move(out), {x}, [rows, d](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r];
  }, "sum_last");
}

template <typename T>
Var<T> mean_last(const Var<T>& x) {
  if (x.shape().empty()) throw UsageError("mean_last: scalar input");
  return scale(sum_last(x), 1.0 / static_cast<double>(x.shape().back()));
}

template <typename T>
Var<T> variance_last(const Var<T>& x) {
  if (x.shape().empty()) throw UsageError("variance_last: scalar input");
  const std::size_t d = x.shape().back(), rows = x.value().size() / d;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor<T> out(out_shape);
  std::vector<T> means(rows);
  const T* xv = x.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += xv[r * d + c];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = xv[r * d + c] - m;
      v += e * e;
    }
    means[r] = static_cast<T>(m);
    out[r] = static_cast<T>(v / static_cast<double>(d));
  }
  return make_result<T>(std::move(out), {x}, [rows, d, means = std::move(means)](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    const T* xv = val(n, 0);
    const T two_over_d = T(2) / static_cast<T>(d);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r] * two_over_d * (xv[r * d + c] - means[r]);
  }, "variance_last");
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
  if (x.shape().empty()) throw UsageError("layer_norm: scalar input");
  const std::size_t d = x.shape().back(), rows = x.value().size() / d;
  if (d < 2) throw UsageError("layer_norm: normalised dimension must be >= 2");
  if (eps <= 0.0) throw UsageError("layer_norm: eps must be positive");
  if (gamma.value().size() != d || beta.value().size() != d) throw UsageError("layer_norm: affine size mismatch");
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.value().size());
  std::vector<T> rstd(rows);
  const T* xv = x.value().data().data();
  const T* gv = gamma.value().data().data();
  const T* bv = beta.value().data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    double m = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += row[c];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = row[c] - m;
      v += e * e;
    }
    v /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(v + eps);
    rstd[r] = static_cast<T>(rs);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = static_cast<T>((row[c] - m) * rs);
      xhat[r * d + c] = h;
      o[r * d + c] = gv[c] * h + bv[c];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
    const T* g = n.grad.data().data();
    const T* gv = val(n, 1);
    T* gx = gbuf(n, 0);
    T* gg = gbuf(n, 1);
    T* gb = gbuf(n, 2);
    const T inv_d = T(1) / static_cast<T>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g + r * d;
      const T* hr = xhat.data() + r * d;
      if (gg || gb) {
        for (std::size_t c = 0; c < d; ++c) {
          if (gg) gg[c] += gr[c] * hr[c];
          if (gb) gb[c] += gr[c];
        }
      }
      if (gx) {
        T sum_dh = 0, sum_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = gr[c] * gv[c];
          sum_dh += dh;
          sum_dh_h += dh * hr[c];
        }
        const T mdh = sum_dh * inv_d, mdhh = sum_dh_h * inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          gx[r * d + c] += rstd[r] * (gr[c] * gv[c] - mdh - hr[c] * mdhh);
        }
      }
    }
  }, "layer_norm");
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  if (x.shape().empty()) throw UsageError("softmax: scalar input");
  const std::size_t d = x.shape().back(), rows = x.value().size() / d;
  Tensor<T> out(x.shape());
  const T* xv = x.value().data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    const T mx = *std::max_element(row, row + d);
    T total = 0;
    for (std::size_t c = 0; c < d; ++c) {
      o[r * d + c] = std::exp(row[c] - mx);
      total += o[r * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) o[r * d + c] /= total;
  }
  return make_result<T>(std::move(out), {x}, [rows, d](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    const T* y = n.value.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  }, "softmax");
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const auto xv = x.value().data();
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return make_result<T>(std::move(out), {x}, [inv_sqrt2](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const auto g = n.grad.data();
    const T* xv = val(n, 0);
    const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
      gx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  }, "gelu");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  const auto xv = x.value().data();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const auto g = n.grad.data();
    const T* xv = val(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  }, "relu");
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x) {
  if (x.shape().empty()) throw UsageError("l2_normalize: scalar input");
  const std::size_t d = x.shape().back(), rows = x.value().size() / d;
  Tensor<T> out(x.shape());
  std::vector<T> norms(rows);
  const T* xv = x.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(xv[r * d + c]) * xv[r * d + c];
    if (s == 0.0) throw NumericError("l2_normalize: zero-norm row " + std::to_string(r));
    norms[r] = static_cast<T>(std::sqrt(s));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] / norms[r];
  }
  return make_result<T>(std::move(out), {x}, [rows, d, norms = std::move(norms)](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const T* g = n.grad.data().data();
    const T* y = n.value.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += (g[r * d + c] - y[r * d + c] * dot) / norms[r];
    }
  }, "l2_normalize");
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank2(logits.shape(), "cross_entropy");
  const std::size_t b = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != b) throw UsageError("cross_entropy: label count does not match batch");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) throw UsageError("cross_entropy: label out of range");
  }
  std::vector<T> probs(b * k);
  const T* z = logits.value().data().data();
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const T* row = z + r * k;
    const T mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += std::exp(static_cast<double>(row[c] - mx));
    const double lse = std::log(total) + mx;
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = static_cast<T>(std::exp(row[c] - lse));
    loss += lse - row[lab[r]];
  }
  loss /= static_cast<double>(b);
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                        [b, k, lab = std::move(lab), probs = std::move(probs)](Node<T>& n) {
    T* gz = gbuf(n, 0);
    const T g = n.grad[0] / static_cast<T>(b);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        gz[r * k + c] += g * (probs[r * k + c] - (static_cast<int>(c) == lab[r] ? T(1) : T(0)));
      }
    }
  }, "cross_entropy");
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.value().size());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(rng) ? s : T(0);
    out[i] = x.value()[i] * mask[i];
  }
  return make_result<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& n) {
    T* gx = gbuf(n, 0);
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  }, "dropout");
}

template <typename T>
Var<T> self_attention(const Var<T>& qkv, std::size_t batch, std::size_t seq, std::size_t heads,
                      AttentionProbs<T>* capture) {
  require_rank2(qkv.shape(), "self_attention");
  if (qkv.shape()[0] != batch * seq || qkv.shape()[1] % 3 != 0) {
    throw UsageError("self_attention: qkv shape " + shape_str(qkv.shape()) + " inconsistent with batch/seq");
  }
  const std::size_t d = qkv.shape()[1] / 3;
  if (heads == 0 || d % heads != 0) throw UsageError("self_attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Eigen::Index L = static_cast<Eigen::Index>(seq), D = static_cast<Eigen::Index>(dh);
  const Eigen::Index stride_in = static_cast<Eigen::Index>(3 * d), stride_out = static_cast<Eigen::Index>(d);

  auto probs = std::make_shared<std::vector<T>>(batch * heads * seq * seq);
  Tensor<T> out(Shape{batch * seq, d});
  const T* src = qkv.value().data().data();
  T* dst = out.data().data();
  parallel_for(batch * heads, 1, [&](std::size_t j0, std::size_t j1) {
    for (std::size_t j = j0; j < j1; ++j) {
      const std::size_t b = j / heads, h = j % heads;
      const T* base = src + b * seq * 3 * d + h * dh;
      ConstStrided<T> q(base, L, D, Eigen::OuterStride<>(stride_in));
      ConstStrided<T> k(base + d, L, D, Eigen::OuterStride<>(stride_in));
      ConstStrided<T> v(base + 2 * d, L, D, Eigen::OuterStride<>(stride_in));
      MutMap<T> p(probs->data() + j * seq * seq, L, L);
      p.noalias() = (q * k.transpose()) * sc;
      for (Eigen::Index r = 0; r < L; ++r) {
        const T mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      MutStrided<T> o(dst + b * seq * d + h * dh, L, D, Eigen::OuterStride<>(stride_out));
      o.noalias() = p * v;
    }
  });
  if (capture) {
    capture->batch = batch;
    capture->heads = heads;
    capture->seq = seq;
    capture->probs = *probs;
  }
  return make_result<T>(std::move(out), {qkv}, [=](Node<T>& n) {
    T* gq_all = gbuf(n, 0);
    const T* g_all = n.grad.data().data();
    const T* src = val(n, 0);
    parallel_for(batch * heads, 1, [&](std::size_t j0, std::size_t j1) {
      RowMat<T> dp(L, L);
      for (std::size_t j = j0; j < j1; ++j) {
        const std::size_t b = j / heads, h = j % heads;
        const T* base = src + b * seq * 3 * d + h * dh;
        T* gbase = gq_all + b * seq * 3 * d + h * dh;
        ConstStrided<T> q(base, L, D, Eigen::OuterStride<>(stride_in));
        ConstStrided<T> k(base + d, L, D, Eigen::OuterStride<>(stride_in));
        ConstStrided<T> v(base + 2 * d, L, D, Eigen::OuterStride<>(stride_in));
        MutStrided<T> gq(gbase, L, D, Eigen::OuterStride<>(stride_in));
        MutStrided<T> gk(gbase + d, L, D, Eigen::OuterStride<>(stride_in));
        MutStrided<T> gv(gbase + 2 * d, L, D, Eigen::OuterStride<>(stride_in));
        ConstStrided<T> go(g_all + b * seq * d + h * dh, L, D, Eigen::OuterStride<>(stride_out));
        ConstMap<T> p(probs->data() + j * seq * seq, L, L);
        gv.noalias() += p.transpose() * go;
        dp.noalias() = go * v.transpose();
        for (Eigen::Index r = 0; r < L; ++r) {
          const T dot = dp.row(r).dot(p.row(r));
          dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
        }
        gq.noalias() += (dp * k) * sc;
        gk.noalias() += (dp.transpose() * q) * sc;
      }
    });
  }, "self_attention");
}

#define NUTIME_INSTANTIATE(T)                                                                         \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale<T>(const Var<T>&, double);                                                    \
  template Var<T> add_scalar<T>(const Var<T>&, double);                                               \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                             \
  template Var<T> transpose<T>(const Var<T>&);                                                        \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                   \
  template Var<T> broadcast_to<T>(const Var<T>&, const Shape&);                                       \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                         \
  template Var<T> slice<T>(const Var<T>&, int, std::size_t, std::size_t);                             \
  template Var<T> sum<T>(const Var<T>&);                                                              \
  template Var<T> mean<T>(const Var<T>&);                                                             \
  template Var<T> sum_last<T>(const Var<T>&);                                                         \
  template Var<T> mean_last<T>(const Var<T>&);                                                        \
  template Var<T> variance_last<T>(const Var<T>&);                                                    \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);                 \
  template Var<T> softmax<T>(const Var<T>&);                                                          \
  template Var<T> gelu<T>(const Var<T>&);                                                             \
  template Var<T> relu<T>(const Var<T>&);                                                             \
  template Var<T> l2_normalize<T>(const Var<T>&);                                                     \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const int>);                              \
  template Var<T> dropout<T>(const Var<T>&, double, std::uint64_t);                                   \
  template Var<T> self_attention<T>(const Var<T>&, std::size_t, std::size_t, std::size_t, AttentionProbs<T>*);

NUTIME_INSTANTIATE(float)
NUTIME_INSTANTIATE(double)
#undef NUTIME_INSTANTIATE

}  // namespace nutime::ops
