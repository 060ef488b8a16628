// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nutime/tensor.hpp"

namespace nutime {

struct Metrics {
  double top1 = 0.0;
  double macro_f1 = 0.0;
};

/// K x K counts, row = truth, column = prediction.
using Confusion = std::vector<std::vector<std::size_t>>;

Confusion confusion_matrix(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes);

/// Unweighted mean of per-class F1; a class with P + R = 0 scores 0.
double macro_f1(const Confusion& confusion);
double accuracy(const Confusion& confusion);
Metrics metrics_from(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes);

struct KMeansResult {
  std::vector<int> assignment;
  Tensor<double> centroids;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> inertia;
};

/// Lloyd's algorithm with seeded farthest-point initialisation; assignment
/// ties go to the lowest cluster index. Stops after `max_iter` rounds or when
/// assignments no longer change.
KMeansResult kmeans(const Tensor<double>& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100);

/// Mean silhouette with Euclidean distance. Singleton clusters score 0.
double silhouette(const Tensor<double>& points, std::span<const int> labels);
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);
/// Mutual information over the arithmetic mean of the two entropies.
double normalized_mutual_info(std::span<const int> a, std::span<const int> b);

struct ClusterMetrics {
  double silhouette = 0.0;
  double ari = 0.0;
  double nmi = 0.0;
};

ClusterMetrics cluster_metrics(const Tensor<double>& points, std::span<const int> truth, std::span<const int> pred);

/// Rank-sum AUROC (label 1 = positive); tied scores receive average ranks.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

struct AnomalyMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auroc = 0.0;
  double threshold = 0.0;
};

}  // namespace nutime
