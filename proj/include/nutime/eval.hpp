// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nutime/metrics.hpp"
#include "nutime/model.hpp"

namespace nutime {

struct FinetuneConfig {
  std::size_t epochs = 100;
  double lr = 2e-4;
  std::size_t batch_size = 64;
  /// Fraction of `epochs` spent in linear warmup.
  double warmup_fraction = 0.1;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  /// Series are resized to a window multiple no longer than this.
  std::size_t max_len = 512;

  void validate() const;
};

/// Number of distinct labels (max label + 1); throws DataError on unlabeled series.
std::size_t count_classes(std::span<const RawSeries> data);

/// Common model input length for a split: the longest series rounded up to a
/// window multiple, capped at `max_len`.
std::size_t input_length(std::span<const RawSeries> data, std::size_t window_size, std::size_t max_len);

/// Every series linearly resized to `length`.
std::vector<RawSeries> resize_all(std::span<const RawSeries> data, std::size_t length);

/// Final CLS representations [N, d_model] (no tape).
template <typename T>
Tensor<double> representations(const Model<T>& model, std::span<const RawSeries> data, std::size_t length,
                               std::size_t batch_size = 64);

/// Logits [N, K] (no tape).
template <typename T>
Tensor<double> predict_logits(const Model<T>& model, std::span<const RawSeries> data, std::size_t length,
                              std::size_t batch_size = 64);

std::vector<int> argmax_rows(const Tensor<double>& logits);
std::vector<int> labels_of(std::span<const RawSeries> data);

template <typename T>
Metrics evaluate(const Model<T>& model, std::span<const RawSeries> data, std::size_t length,
                 std::size_t batch_size = 64);

/// Averages the logits of several models before taking the argmax.
template <typename T>
Metrics evaluate_ensemble(std::span<const Model<T>> models, std::span<const RawSeries> data, std::size_t length,
                          std::size_t batch_size = 64);

template <typename T>
struct FinetuneResult {
  Model<T> model;
  Metrics val;
  std::size_t best_epoch = 0;
  /// Input length used for every split.
  std::size_t length = 0;
  std::vector<double> train_loss;
};

/// Prepares `model` for a labelled dataset: adds a channel merge when the data
/// is multivariate and (re)creates the head when the class count differs.
template <typename T>
void prepare_for_task(Model<T>& model, std::size_t n_channels, std::size_t n_classes, std::uint64_t seed);

/// Full-model cross-entropy training with AdamW under warmup + cosine. After
/// each epoch the validation split is scored; the best (first on ties)
/// parameters are returned. 0 epochs returns the initial parameters.
template <typename T>
FinetuneResult<T> finetune(Model<T> model, std::span<const RawSeries> train, std::span<const RawSeries> val,
                           const FinetuneConfig& cfg, const std::function<void(std::size_t, double, const Metrics&)>& on_epoch = {});

struct ProbeConfig {
  std::size_t steps = 500;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Softmax regression on standardised features; trained full-batch with Adam.
Metrics linear_probe_features(const Tensor<double>& train_x, std::span<const int> train_y,
                              const Tensor<double>& test_x, std::span<const int> test_y, std::size_t n_classes,
                              const ProbeConfig& cfg = {});

template <typename T>
Metrics linear_probe(const Model<T>& model, std::span<const RawSeries> train, std::span<const RawSeries> test,
                     const ProbeConfig& cfg = {}, std::size_t max_len = 512);

struct EpisodeSpec {
  std::size_t n_shots = 5;
  std::size_t n_episodes = 100;
  std::uint64_t seed = 0;
  std::size_t steps = 50;
  double lr = 2e-4;
  std::size_t max_len = 512;

  void validate() const;
};

struct FewShotResult {
  Metrics mean;
  Metrics std;
  std::vector<Metrics> episodes;
};

/// Each episode samples n_shots support series per class from `pool`,
/// re-initialises the head, fine-tunes the full model for `steps` AdamW steps
/// on the support set and scores the `query` split.
template <typename T>
FewShotResult few_shot_eval(const Model<T>& model, std::span<const RawSeries> pool, std::span<const RawSeries> query,
                            const EpisodeSpec& spec);

/// K-means on representations, scored against the true labels.
ClusterMetrics cluster_eval(const Tensor<double>& reps, std::span<const int> labels, std::size_t k,
                            std::uint64_t seed = 0);

/// Centroid-distance anomaly scoring. Scores above the q-th percentile of the
/// normal training scores are flagged; label 1 marks an anomaly.
AnomalyMetrics anomaly_eval(const Tensor<double>& normal_train, const Tensor<double>& test,
                            std::span<const int> test_labels, double q = 95.0);

/// Distance of each row of `x` to the centroid of `normal`.
std::vector<double> anomaly_scores(const Tensor<double>& normal, const Tensor<double>& x);

}  // namespace nutime
