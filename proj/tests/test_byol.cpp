// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include <cmath>

#include "doctest.h"
#include "nutime/byol.hpp"
#include "nutime/errors.hpp"
#include "support.hpp"

using namespace nutime;
using nutime::testing::tiny_config;
using nutime::testing::wave;

namespace {

Var<double> rows(std::vector<double> v, std::size_t r, std::size_t c) {
  return Var<double>::constant(Tensor<double>::matrix(r, c, std::move(v)));
}

ByolConfig tiny_byol() {
  ByolConfig b;
  b.proj_hidden = 8;
  b.proj_dim = 4;
  b.pred_hidden = 8;
  b.batch_size = 4;
  b.epochs = 1;
  b.warmup_epochs = 0;
  b.crop_len = 16;
  b.seed = 3;
  return b;
}

std::vector<RawSeries> tiny_data(std::size_t n) {
  std::vector<RawSeries> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(wave(20, 100 + i, i % 2 ? 100.0 : 0.01, static_cast<int>(i % 2)));
  return d;
}

}  // namespace

TEST_CASE("byol loss oracles") {
  auto a = rows({1, 0, 0, 2}, 2, 2);
  CHECK(byol_loss(a, rows({3, 0, 0, 5}, 2, 2)).value().item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(byol_loss(a, rows({0, 1, 7, 0}, 2, 2)).value().item() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(byol_loss(a, rows({-1, 0, 0, -4}, 2, 2)).value().item() == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(byol_loss(a, rows({0, 0, 0, 1}, 2, 2)), NumericError);
  auto s = symmetric_byol_loss(a, a, rows({-1, 0, 0, -1}, 2, 2), rows({1, 0, 0, 1}, 2, 2));
  CHECK(s.value().item() == doctest::Approx(2.0));
}

TEST_CASE("byol loss detaches the target") {
  ParamStore<double> st;
  st.add("p", Tensor<double>::matrix(1, 2, {1, 2}));
  st.add("z", Tensor<double>::matrix(1, 2, {2, -1}));
  auto g = backward(byol_loss(st.get("p"), st.get("z")));
  CHECK(g.count("p") == 1);
  CHECK(g.count("z") == 0);
}

TEST_CASE("siamese: target branch gets no gradient even when tracked") {
  auto enc = create_model<double>(tiny_config(0), 1);
  auto state = make_siamese(enc, tiny_byol());
  CHECK(state.online.params.contains("byol.predictor.fc1.weight"));
  CHECK_FALSE(state.target.params.contains("byol.predictor.fc1.weight"));
  CHECK(state.target.params.contains("byol.projector.fc1.weight"));
  state.target.params.set_requires_grad(true);
  auto data = tiny_data(4);
  std::vector<RawSeries> v1, v2;
  for (std::size_t i = 0; i < data.size(); ++i) {
    v1.push_back(random_resized_crop(data[i], 2 * i, 0.8, 16));
    v2.push_back(random_resized_crop(data[i], 2 * i + 1, 0.8, 16));
  }
  auto loss = siamese_loss(state, std::span<const RawSeries>(v1), std::span<const RawSeries>(v2), true);
  auto g = backward(loss);
  std::size_t online = 0;
  for (const auto& [id, grad] : g) {
    CHECK(id.rfind("target/", 0) != 0);
    if (id.rfind("byol.predictor", 0) == 0) ++online;
  }
  CHECK(online > 0);
  const double l = loss.value().item();
  CHECK(l >= 0.0);
  CHECK(l <= 4.0);
}

TEST_CASE("momentum update endpoints and midpoint") {
  ParamStore<double> online, target;
  online.add("w", Tensor<double>::vector({1, 3}));
  target.add("w", Tensor<double>::vector({-1, 5}), false);
  auto t = target.clone();
  momentum_update(t, online, 1.0);
  CHECK(nutime::testing::vec(t.value("w")) == std::vector<double>{-1, 5});
  momentum_update(t, online, 0.5);
  CHECK(nutime::testing::vec(t.value("w")) == std::vector<double>{0, 4});
  momentum_update(t, online, 0.0);
  CHECK(nutime::testing::vec(t.value("w")) == std::vector<double>{1, 3});
  CHECK_THROWS_AS(momentum_update(t, online, 1.5), UsageError);
  CHECK_THROWS_AS(momentum_update(t, online, -0.1), UsageError);
}

TEST_CASE("tau schedule") {
  CHECK(tau_at(0.99, 0, 100) == doctest::Approx(0.99));
  CHECK(tau_at(0.99, 50, 100) == doctest::Approx(0.995));
  CHECK(tau_at(0.99, 100, 100) == doctest::Approx(1.0));
  double prev = 0;
  for (int k = 0; k <= 100; ++k) {
    CHECK(tau_at(0.99, k, 100) >= prev);
    prev = tau_at(0.99, k, 100);
  }
}

TEST_CASE("row spread witness") {
  CHECK(normalized_row_spread(Tensor<double>::matrix(3, 2, {1, 1, 2, 2, 5, 5})) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normalized_row_spread(Tensor<double>::matrix(2, 2, {1, 0, 0, 1})) == doctest::Approx(0.5));
}

TEST_CASE("pretrain step count, log and determinism") {
  auto data = tiny_data(8);
  auto cfg = tiny_config(0);
  auto a = pretrain<double>(std::span<const RawSeries>(data), cfg, tiny_byol());
  CHECK(a.steps == 2);
  REQUIRE(a.log.size() == 1);
  CHECK(std::isfinite(a.log[0].mean_loss));
  CHECK(a.projection_std > 0.0);
  for (const auto& n : a.model.params.names()) CHECK(n.rfind("byol.", 0) != 0);
  auto b = pretrain<double>(std::span<const RawSeries>(data), cfg, tiny_byol());
  for (const auto& n : a.model.params.names()) CHECK(nutime::testing::vec(a.model.params.value(n)) == nutime::testing::vec(b.model.params.value(n)));
  CHECK(a.log[0].mean_loss == b.log[0].mean_loss);
  auto csv = loss_log_csv(a.log);
  CHECK(csv.rfind("epoch,mean_loss,lr,tau\n", 0) == 0);
}

TEST_CASE("pretrain changes the encoder") {
  auto data = tiny_data(8);
  auto cfg = tiny_config(0);
  auto before = create_model<double>(cfg, tiny_byol().seed);
  auto bc = tiny_byol();
  bc.epochs = 2;
  auto r = pretrain<double>(std::span<const RawSeries>(data), cfg, bc);
  CHECK(r.log.size() == 2);
  double moved = 0;
  for (const auto& n : r.model.params.names()) {
    const auto& x = r.model.params.value(n);
    const auto& y = before.params.value(n);
    for (std::size_t i = 0; i < x.size(); ++i) moved += std::fabs(x[i] - y[i]);
  }
  CHECK(moved > 0.0);
}

TEST_CASE("pretrain rejects bad input") {
  auto cfg = tiny_config(0);
  std::vector<RawSeries> empty;
  CHECK_THROWS(pretrain<double>(std::span<const RawSeries>(empty), cfg, tiny_byol()));
  auto b = tiny_byol();
  b.tau_base = 1.5;
  CHECK_THROWS_AS(b.validate(), UsageError);
  std::uint64_t s1 = mix_seed(1, 2), s2 = mix_seed(1, 3);
  CHECK(s1 != s2);
  CHECK(mix_seed(1, 2) == s1);
}
