// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nutime/model.hpp"
#include "nutime/optim.hpp"

namespace nutime {

/// Self-supervised pretraining settings. Defaults are the desk-scale recipe:
/// batch 64 with the learning rate scaled linearly from 2e-3 @ 2048.
struct ByolConfig {
  std::size_t proj_hidden = 256;
  std::size_t proj_dim = 64;
  std::size_t pred_hidden = 256;
  double tau_base = 0.99;
  std::size_t epochs = 100;
  double warmup_epochs = 10;
  double base_lr = 2e-3 * 64.0 / 2048.0;
  std::size_t batch_size = 64;
  double weight_decay = 0.05;
  double min_crop = 0.8;
  std::size_t crop_len = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Online network: encoder plus `byol.projector.*` and `byol.predictor.*`.
/// Target network: encoder plus projector, gradient ids prefixed `target/`,
/// never tracked.
template <typename T>
struct SiameseState {
  Model<T> online;
  Model<T> target;
  OptimizerState<T> optimizer;
  std::int64_t step = 0;
};

/// Linear -> LayerNorm -> ReLU -> Linear.
template <typename T>
void init_mlp_head(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                   std::size_t out, std::mt19937_64& rng);
template <typename T>
Var<T> mlp_head(const ParamStore<T>& store, const std::string& prefix, const Var<T>& x, double ln_eps = 1e-5);

template <typename T>
SiameseState<T> make_siamese(const Model<T>& encoder, const ByolConfig& cfg);

/// Mean over rows of 2 - 2 cos(p_i, z_i). `target_projection` is detached.
/// Zero-norm rows raise NumericError.
template <typename T>
Var<T> byol_loss(const Var<T>& online_prediction, const Var<T>& target_projection);

/// 0.5 * (loss(p1, z2) + loss(p2, z1)); lies in [0, 4].
template <typename T>
Var<T> symmetric_byol_loss(const Var<T>& p1, const Var<T>& p2, const Var<T>& z1, const Var<T>& z2);

/// target <- tau * target + (1 - tau) * online for every target parameter.
template <typename T>
void momentum_update(ParamStore<T>& target, const ParamStore<T>& online, double tau);

/// tau_k = 1 - (1 - tau_base) * (cos(pi k / K) + 1) / 2.
double tau_at(double tau_base, std::int64_t step, std::int64_t total_steps);

/// Symmetric loss of one batch of paired views. When `track_target` is false
/// the target branch runs without recording a tape.
template <typename T>
Var<T> siamese_loss(const SiameseState<T>& state, std::span<const RawSeries> view1, std::span<const RawSeries> view2,
                    bool track_target = false);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  double tau = 0.0;
};

template <typename T>
struct PretrainResult {
  /// Online encoder (no BYOL heads).
  Model<T> model;
  std::vector<EpochRecord> log;
  std::int64_t steps = 0;
  /// Mean over dimensions of the across-batch std of L2-normalised online
  /// projections after training (collapse witness).
  double projection_std = 0.0;
};

/// Mean over dimensions of per-dimension std across rows of L2-normalised rows.
double normalized_row_spread(const Tensor<double>& rows);

/// BYOL pretraining on univariate series. Each step draws two independent
/// random-resized-crop views per sample, steps AdamW on the symmetric loss at
/// the warmup+cosine rate and then moves the target by the cosine tau.
/// Deterministic in cfg.seed. A non-finite loss raises NumericError carrying
/// a JSON state dump.
template <typename T>
PretrainResult<T> pretrain(std::span<const RawSeries> dataset, const ModelConfig& model_cfg, const ByolConfig& cfg,
                           const std::function<void(const EpochRecord&)>& on_epoch = {});

/// "epoch,mean_loss,lr,tau" CSV with a header row.
std::string loss_log_csv(const std::vector<EpochRecord>& log);

/// SplitMix64-style mixing of a seed with stream identifiers.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace nutime
