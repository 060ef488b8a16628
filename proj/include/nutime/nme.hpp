// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <random>
#include <string>
#include <vector>

#include "nutime/autograd.hpp"

namespace nutime {

/// Numerically multi-scaled embedding of real scalars.
///
/// Each scale k_i owns a basic block y_i(x) = LN(x * w_i + k_i * b_i) with a
/// learnable affine (gamma_i, beta_i). The embedding is the convex
/// combination e(x) = sum_i alpha_i(x) y_i(x) with
///
///   alpha_i(x) ~ 1 / |ln(|x| / k_i + epsilon)|
///
/// so the block whose scale matches |x| dominates. Raw weights are clamped at
/// `weight_clamp` to stay finite where |x| / k_i + epsilon == 1.
struct NmeConfig {
  std::vector<double> scales = default_scales();
  double epsilon = 1e-6;
  std::size_t embed_dim = 32;
  double weight_clamp = 1e12;
  bool weighted = true;
  /// Gaussian init std of w_i and b_i.
  double init_std_w = 1.0;
  double init_std_b = 1.0;

  /// 1e-4, 1e-3, ..., 1e4.
  static std::vector<double> default_scales();
  void validate() const;
};

/// Ensemble weights of `x` over `cfg.scales`; sums to one.
std::vector<double> scale_weights(double x, const NmeConfig& cfg);

/// Weights actually applied by nme_embed: scale_weights when `cfg.weighted`,
/// otherwise uniform.
std::vector<double> ensemble_weights(double x, const NmeConfig& cfg);

/// Parameter name prefix of scale `i` under an embedder `prefix`.
std::string nme_scale_prefix(const std::string& prefix, std::size_t i);

/// Adds w, b (Gaussian) and gamma = 1, beta = 0 for every scale.
template <typename T>
void init_nme_params(ParamStore<T>& store, const std::string& prefix, const NmeConfig& cfg, std::mt19937_64& rng);

/// LN(x * w + k * b) for a batch x[B] -> [B, D]. The LayerNorm epsilon is
/// `ln_eps * k^2`, which makes the block exactly invariant under
/// (x, k) -> (c x, c k) and keeps small-k blocks normalised.
template <typename T>
Var<T> basic_block(const Var<T>& x, double k, const ParamStore<T>& store, const std::string& scale_prefix,
                   double ln_eps = 1e-5);

/// e(x) for a batch x[B] -> [B, D]. The weights enter the graph as constants.
template <typename T>
Var<T> nme_embed(const Var<T>& x, const NmeConfig& cfg, const ParamStore<T>& store, const std::string& prefix,
                 double ln_eps = 1e-5);

}  // namespace nutime
