// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include <cmath>

#include "doctest.h"
#include "nutime/errors.hpp"
#include "nutime/eval.hpp"
#include "nutime/metrics.hpp"
#include "support.hpp"

using namespace nutime;
using nutime::testing::tiny_config;
using nutime::testing::wave;

namespace {

template <typename V>
std::span<const typename V::value_type> sp(const V& v) {
  return {v.data(), v.size()};
}

Tensor<double> four_points() { return Tensor<double>::matrix(4, 2, {0, 0, 0, 1, 10, 0, 10, 1}); }

}  // namespace

TEST_CASE("silhouette of the four-point example") {
  const std::vector<int> lab{0, 0, 1, 1};
  const double b = (10.0 + std::sqrt(101.0)) / 2.0;
  CHECK(silhouette(four_points(), sp(lab)) == doctest::Approx(1.0 - 1.0 / b).epsilon(1e-12));
  CHECK(silhouette(four_points(), sp(lab)) == doctest::Approx(0.90).epsilon(0.012));
  auto km = kmeans(four_points(), 2, 0);
  CHECK(km.assignment[0] == km.assignment[1]);
  CHECK(km.assignment[2] == km.assignment[3]);
  CHECK(km.assignment[0] != km.assignment[2]);
  // Singletons score zero.
  const std::vector<int> single{0, 1, 2, 2};
  const double s = silhouette(four_points(), sp(single));
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
}

TEST_CASE("ARI and NMI") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  const std::vector<int> relabeled{5, 5, 3, 3, 9, 9};
  CHECK(adjusted_rand_index(sp(a), sp(relabeled)) == doctest::Approx(1.0));
  CHECK(normalized_mutual_info(sp(a), sp(relabeled)) == doctest::Approx(1.0));
  const std::vector<int> one{0, 0, 0, 0, 0, 0};
  CHECK(adjusted_rand_index(sp(one), sp(one)) == 1.0);
  CHECK(normalized_mutual_info(sp(one), sp(one)) == 1.0);
  // Independent partitions: known value from the contingency table.
  const std::vector<int> x{0, 0, 1, 1}, y{0, 1, 0, 1};
  CHECK(adjusted_rand_index(sp(x), sp(y)) == doctest::Approx(-0.5));
  CHECK(normalized_mutual_info(sp(x), sp(y)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("AUROC rank-sum examples") {
  const std::vector<double> s{1, 2, 3, 4};
  const std::vector<int> l1{0, 0, 1, 1}, l2{0, 1, 0, 1};
  CHECK(auroc(sp(s), sp(l1)) == 1.0);
  CHECK(auroc(sp(s), sp(l2)) == 0.75);
  const std::vector<double> tied{1, 1, 1, 1};
  CHECK(auroc(sp(tied), sp(l1)) == 0.5);
  std::vector<double> mono;
  for (double v : s) mono.push_back(std::exp(3 * v) - 7);
  CHECK(auroc(sp(mono), sp(l2)) == 0.75);
  const std::vector<int> bad{0, 2, 0, 1};
  CHECK_THROWS(auroc(sp(s), sp(bad)));
}

TEST_CASE("macro F1 examples") {
  CHECK(macro_f1(Confusion{{1, 1}, {1, 1}}) == 0.5);
  CHECK(macro_f1(Confusion{{3, 0, 0}, {0, 2, 0}, {0, 0, 5}}) == 1.0);
  // Absent class contributes zero.
  CHECK(macro_f1(Confusion{{2, 0, 0}, {0, 2, 0}, {0, 0, 0}}) == doctest::Approx(2.0 / 3.0));
  const std::vector<int> t{0, 0, 1, 1}, p{0, 1, 0, 1};
  auto m = metrics_from(sp(t), sp(p), 2);
  CHECK(m.top1 == 0.5);
  CHECK(m.macro_f1 == 0.5);
  CHECK(accuracy(confusion_matrix(sp(t), sp(t), 2)) == 1.0);
}

TEST_CASE("percentile interpolates") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(percentile({1, 2}, 25) == 1.25);
  CHECK(percentile({4}, 95) == 4.0);
}

TEST_CASE("kmeans inertia is non-increasing and seeded") {
  auto pts = nutime::testing::random_tensor(Shape{60, 3}, 7);
  auto r = kmeans(pts, 4, 11);
  for (std::size_t i = 1; i < r.inertia.size(); ++i) CHECK(r.inertia[i] <= r.inertia[i - 1] + 1e-12);
  auto again = kmeans(pts, 4, 11);
  CHECK(again.assignment == r.assignment);
  CHECK_THROWS_AS(kmeans(Tensor<double>::matrix(3, 1, {1, 1, 1}), 2, 0), DataError);
}

TEST_CASE("linear probe on separable one-hot features") {
  Tensor<double> x(Shape{12, 3});
  std::vector<int> y(12);
  for (std::size_t i = 0; i < 12; ++i) {
    y[i] = static_cast<int>(i % 3);
    x.at(i, i % 3) = 1.0;
  }
  auto m = linear_probe_features(x, sp(y), x, sp(y), 3, ProbeConfig{});
  CHECK(m.top1 == 1.0);
  CHECK(m.macro_f1 == 1.0);
}

TEST_CASE("anomaly evaluation on centroid distance") {
  auto normal = Tensor<double>::matrix(4, 1, {0.0, 0.1, -0.1, 0.05});
  auto test = Tensor<double>::matrix(4, 1, {0.0, 0.02, 5.0, -6.0});
  const std::vector<int> lab{0, 0, 1, 1};
  auto r = anomaly_eval(normal, test, sp(lab), 95.0);
  CHECK(r.auroc == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  auto scores = anomaly_scores(normal, test);
  CHECK(scores[2] == doctest::Approx(4.9875));
}

TEST_CASE("cluster_eval on separated representations") {
  const std::vector<int> lab{0, 0, 1, 1};
  auto r = cluster_eval(four_points(), sp(lab), 2, 0);
  CHECK(r.ari == 1.0);
  CHECK(r.nmi == doctest::Approx(1.0));
  CHECK(r.silhouette == doctest::Approx(0.90).epsilon(0.012));
}

namespace {

std::vector<RawSeries> offset_data(std::size_t n, std::uint64_t seed) {
  std::vector<RawSeries> d;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    d.push_back(wave(16, seed + i, label ? 100.0 : 0.01, label));
  }
  return d;
}

}  // namespace

TEST_CASE("finetune: zero epochs, selection and errors") {
  auto train = offset_data(8, 1), val = offset_data(4, 50);
  FinetuneConfig fc;
  fc.epochs = 0;
  fc.batch_size = 4;
  auto m = create_model<double>(tiny_config(2), 3);
  auto r0 = finetune(m, sp(train), sp(val), fc);
  CHECK(r0.best_epoch == 0);
  CHECK(r0.length == 16);
  for (const auto& n : m.params.names()) CHECK(nutime::testing::vec(r0.model.params.value(n)) == nutime::testing::vec(m.params.value(n)));
  fc.epochs = 3;
  fc.lr = 1e-3;
  auto r = finetune(m, sp(train), sp(val), fc);
  CHECK(r.train_loss.size() == 3);
  CHECK(r.val.top1 >= r0.val.top1);
  auto again = finetune(m, sp(train), sp(val), fc);
  CHECK(again.train_loss == r.train_loss);
  std::vector<RawSeries> one_class(train.begin(), train.begin() + 1);
  CHECK_THROWS(finetune(m, sp(one_class), sp(val), fc));
}

TEST_CASE("prepare_for_task swaps head and merge") {
  auto m = create_model<double>(tiny_config(2), 4);
  prepare_for_task(m, 3, 5, 9);
  CHECK(m.config.n_classes == 5);
  CHECK(m.config.n_channels == 3);
  CHECK(m.params.contains("embed.merge.weight"));
  prepare_for_task(m, 1, 5, 9);
  CHECK_FALSE(m.params.contains("embed.merge.weight"));
  CHECK(m.params.numel() == parameter_count(m.config));
}

TEST_CASE("few-shot episodes are seeded") {
  auto pool = offset_data(10, 100), query = offset_data(6, 200);
  EpisodeSpec spec;
  spec.n_shots = 2;
  spec.n_episodes = 2;
  spec.steps = 2;
  spec.seed = 5;
  auto m = create_model<double>(tiny_config(2), 6);
  auto a = few_shot_eval(m, sp(pool), sp(query), spec);
  auto b = few_shot_eval(m, sp(pool), sp(query), spec);
  CHECK(a.episodes.size() == 2);
  CHECK(a.episodes[0].top1 == b.episodes[0].top1);
  CHECK(a.episodes[1].macro_f1 == b.episodes[1].macro_f1);
  spec.n_shots = 9;
  CHECK_THROWS(few_shot_eval(m, sp(pool), sp(query), spec));
}
