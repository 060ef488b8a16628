// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nutime/autograd.hpp"

// Differentiable tensor operations. Every op checks that its result is
// finite and throws NumericError otherwise. Binary elementwise ops follow
// numpy broadcasting rules.
namespace nutime::ops {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, double s);
template <typename T> Var<T> add_scalar(const Var<T>& x, double s);

/// [m x k] * [k x n].
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x[..., k] * w[k, n] + bias[n]; `bias` may be empty.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);
template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> broadcast_to(const Var<T>& x, const Shape& shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, int axis);
/// Elements [begin, end) along `axis`.
template <typename T> Var<T> slice(const Var<T>& x, int axis, std::size_t begin, std::size_t end);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// Reductions over the last axis; the axis is dropped.
template <typename T> Var<T> sum_last(const Var<T>& x);
template <typename T> Var<T> mean_last(const Var<T>& x);
/// Biased (1/D) variance over the last axis.
template <typename T> Var<T> variance_last(const Var<T>& x);

/// Row-wise layer normalisation over the last axis with biased variance.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5);
/// Max-subtracted softmax over the last axis.
template <typename T> Var<T> softmax(const Var<T>& x);
/// Exact (erf) GELU.
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
/// Rows scaled to unit L2 norm. A zero row is a NumericError.
template <typename T> Var<T> l2_normalize(const Var<T>& x);
/// Mean softmax cross-entropy of logits[B, K] against integer labels.
template <typename T> Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);
/// Inverted dropout with a seeded mask; identity when rate == 0.
template <typename T> Var<T> dropout(const Var<T>& x, double rate, std::uint64_t seed);

/// Captured attention probabilities, laid out [batch][head][query][key].
template <typename T>
struct AttentionProbs {
  std::size_t batch = 0, heads = 0, seq = 0;
  std::vector<T> probs;
  T at(std::size_t b, std::size_t h, std::size_t q, std::size_t k) const {
    return probs[((b * heads + h) * seq + q) * seq + k];
  }
};

/// Scaled dot-product self-attention over packed projections.
/// `qkv` is [batch*seq, 3*d] holding queries, keys and values side by side;
/// the result is [batch*seq, d] with heads concatenated.
template <typename T>
Var<T> self_attention(const Var<T>& qkv, std::size_t batch, std::size_t seq, std::size_t heads,
                      AttentionProbs<T>* capture = nullptr);

}  // namespace nutime::ops
