// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nutime/autograd.hpp"
#include "nutime/model.hpp"

namespace nutime::testing {

struct GradReport {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
};

/// Central differences on up to `per_tensor` sampled coordinates of every
/// tracked parameter. The error of a tensor is ||a - n|| / max(||a||, ||n||)
/// over its sampled coordinates; tensors whose gradient is identically zero on
/// both sides are skipped. Returns the worst tensor.
inline GradReport check_gradients(ParamStore<double>& store, const std::function<Var<double>()>& loss_fn,
                                  std::size_t per_tensor = 4, double h = 1e-5, std::uint64_t seed = 1) {
  GradientSet<double> analytic = backward(loss_fn());
  GradReport rep;
  std::mt19937_64 rng(seed);
  for (const auto& name : store.names()) {
    if (!store.get(name).requires_grad()) continue;
    Tensor<double>& value = store.mutable_value(name);
    const std::size_t n = value.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, per_tensor));
    auto it = analytic.find(name);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i : idx) {
      const double orig = value[i];
      value[i] = orig + h;
      const double up = loss_fn().value().item();
      value[i] = orig - h;
      const double down = loss_fn().value().item();
      value[i] = orig;
      const double num = (up - down) / (2 * h);
      const double ana = it == analytic.end() ? 0.0 : it->second[i];
      diff += (ana - num) * (ana - num);
      na += ana * ana;
      nn += num * num;
    }
    const double denom = std::sqrt(std::max(na, nn));
    if (denom < 1e-12) continue;
    const double rel = std::sqrt(diff) / denom;
    ++rep.checked;
    if (rel > rep.worst) {
      rep.worst = rel;
      rep.worst_name = name;
    }
  }
  return rep;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("nutime-test-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Deterministic pseudo-random matrix with entries in [-1, 1].
inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Copy of a tensor's values, for equality checks.
template <typename T>
std::vector<T> vec(const Tensor<T>& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

/// Small f64-friendly model used by gradient and training tests.
inline ModelConfig tiny_config(std::size_t n_classes = 2) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.mlp_dim = 16;
  c.window_size = 4;
  c.shape_embed_dim = 6;
  c.mean_std_embed_dim = 4;
  c.nme.embed_dim = 4;
  c.nme.scales = {1e-2, 1.0, 1e2};
  c.n_classes = n_classes;
  return c;
}

/// Sine-plus-offset series of `length` points, deterministic in `seed`.
inline RawSeries wave(std::size_t length, std::uint64_t seed, double offset = 0.0, int label = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 6.283185307179586);
  const double phase = u(rng);
  std::vector<double> v(length);
  for (std::size_t i = 0; i < length; ++i) v[i] = offset + std::sin(phase + 0.4 * static_cast<double>(i)) + 0.1 * u(rng);
  return RawSeries::univariate(std::move(v), label);
}

}  // namespace nutime::testing
