// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "nutime/errors.hpp"

namespace nutime {

Confusion confusion_matrix(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  if (truth.size() != pred.size()) throw UsageError("confusion_matrix: length mismatch");
  if (n_classes == 0) throw UsageError("confusion_matrix: zero classes");
  Confusion c(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= n_classes ||
        static_cast<std::size_t>(pred[i]) >= n_classes) {
      throw UsageError("confusion_matrix: label out of range");
    }
    ++c[truth[i]][pred[i]];
  }
  return c;
}

double macro_f1(const Confusion& c) {
  const std::size_t k = c.size();
  if (k == 0) throw UsageError("macro_f1: empty confusion matrix");
  for (const auto& row : c) {
    if (row.size() != k) throw UsageError("macro_f1: confusion matrix must be square");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double tp = static_cast<double>(c[j][j]), col = 0.0, row = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      col += static_cast<double>(c[i][j]);
      row += static_cast<double>(c[j][i]);
    }
    const double p = col > 0 ? tp / col : 0.0;
    const double r = row > 0 ? tp / row : 0.0;
    total += (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return total / static_cast<double>(k);
}

double accuracy(const Confusion& c) {
  double hit = 0.0, all = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c[i].size(); ++j) {
      all += static_cast<double>(c[i][j]);
      if (i == j) hit += static_cast<double>(c[i][j]);
    }
  }
  if (all == 0) throw UsageError("accuracy: no samples");
  return hit / all;
}

Metrics metrics_from(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  auto c = confusion_matrix(truth, pred, n_classes);
  return {accuracy(c), macro_f1(c)};
}

namespace {

double sq_dist(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double d = a.at(i, c) - b.at(j, c);
    s += d * d;
  }
  return s;
}

std::vector<int> compact(std::span<const int> labels) {
  std::map<int, int> ids;
  for (int l : labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& kv : ids) kv.second = next++;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids[labels[i]];
  return out;
}

}  // namespace

KMeansResult kmeans(const Tensor<double>& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  if (x.rank() != 2) throw UsageError("kmeans: expected [N, d] points");
  if (k < 2) throw UsageError("kmeans: K must be >= 2");
  const std::size_t n = x.rows(), d = x.cols();
  {
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < n && distinct.size() < k; ++i) {
      distinct.emplace(x.data().begin() + i * d, x.data().begin() + (i + 1) * d);
    }
    if (distinct.size() < k) throw DataError("kmeans: fewer distinct points than K");
  }
  KMeansResult r;
  r.centroids = Tensor<double>(Shape{k, d});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t first = pick(rng);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t chosen = first;
    if (c > 0) {
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] > best) {
          best = nearest[i];
          chosen = i;
        }
      }
    }
    for (std::size_t j = 0; j < d; ++j) r.centroids.at(c, j) = x.at(chosen, j);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(x, i, r.centroids, c));
  }

  r.assignment.assign(n, -1);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(x, i, r.centroids, 0);
      for (std::size_t c = 1; c < k; ++c) {
        const double dd = sq_dist(x, i, r.centroids, c);
        if (dd < bd) {
          bd = dd;
          best = static_cast<int>(c);
        }
      }
      changed = changed || r.assignment[i] != best;
      r.assignment[i] = best;
      inertia += bd;
    }
    r.inertia.push_back(inertia);
    if (!changed && it > 0) break;
    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[r.assignment[i]];
      for (std::size_t j = 0; j < d; ++j) sums[r.assignment[i] * d + j] += x.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < d; ++j) r.centroids.at(c, j) = sums[c * d + j] / static_cast<double>(counts[c]);
    }
  }
  return r;
}

double silhouette(const Tensor<double>& x, std::span<const int> labels_in) {
  if (x.rank() != 2 || x.rows() != labels_in.size()) throw UsageError("silhouette: shape mismatch");
  const auto labels = compact(labels_in);
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  if (k < 2) throw UsageError("silhouette: needs at least 2 clusters");
  const std::size_t n = x.rows();
  std::vector<std::size_t> sizes(k, 0);
  for (int l : labels) ++sizes[l];
  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) sums[labels[j]] += std::sqrt(sq_dist(x, i, x, j));
    }
    const int own = labels[i];
    if (sizes[own] < 2) continue;
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

namespace {

struct Contingency {
  std::vector<std::vector<double>> table;
  std::vector<double> rows, cols;
  double n = 0;
};

Contingency contingency(std::span<const int> a_in, std::span<const int> b_in) {
  if (a_in.size() != b_in.size() || a_in.empty()) throw UsageError("partition metrics: length mismatch or empty");
  const auto a = compact(a_in), b = compact(b_in);
  const int ka = *std::max_element(a.begin(), a.end()) + 1;
  const int kb = *std::max_element(b.begin(), b.end()) + 1;
  Contingency c;
  c.table.assign(ka, std::vector<double>(kb, 0.0));
  c.rows.assign(ka, 0.0);
  c.cols.assign(kb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.table[a[i]][b[i]] += 1;
    c.rows[a[i]] += 1;
    c.cols[b[i]] += 1;
  }
  c.n = static_cast<double>(a.size());
  return c;
}

double comb2(double v) { return v * (v - 1.0) / 2.0; }

}  // namespace

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  const auto c = contingency(a, b);
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& row : c.table) {
    for (double v : row) index += comb2(v);
  }
  for (double v : c.rows) sa += comb2(v);
  for (double v : c.cols) sb += comb2(v);
  const double expected = sa * sb / comb2(c.n);
  const double max_index = 0.5 * (sa + sb);
  // Both partitions trivial (all-one-cluster or all-singletons alike).
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

double normalized_mutual_info(std::span<const int> a, std::span<const int> b) {
  const auto c = contingency(a, b);
  auto entropy = [&](const std::vector<double>& m) {
    double h = 0.0;
    for (double v : m) {
      if (v > 0) h -= (v / c.n) * std::log(v / c.n);
    }
    return h;
  };
  const double ha = entropy(c.rows), hb = entropy(c.cols);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < c.table.size(); ++i) {
    for (std::size_t j = 0; j < c.table[i].size(); ++j) {
      const double v = c.table[i][j];
      if (v > 0) mi += (v / c.n) * std::log(c.n * v / (c.rows[i] * c.cols[j]));
    }
  }
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

ClusterMetrics cluster_metrics(const Tensor<double>& points, std::span<const int> truth, std::span<const int> pred) {
  ClusterMetrics m;
  m.silhouette = silhouette(points, pred);
  m.ari = adjusted_rand_index(truth, pred);
  m.nmi = normalized_mutual_info(truth, pred);
  return m;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw UsageError("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = avg;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    } else if (labels[i] == 0) {
      neg += 1;
    } else {
      throw UsageError("auroc: labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw UsageError("auroc: needs both positive and negative samples");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0)) throw UsageError("percentile: q must lie in [0, 100]");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace nutime
