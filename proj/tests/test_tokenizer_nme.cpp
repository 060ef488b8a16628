// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include <cmath>
#include <random>

#include "doctest.h"
#include "nutime/errors.hpp"
#include "nutime/nme.hpp"
#include "nutime/tokenizer.hpp"
#include "support.hpp"

using namespace nutime;
using nutime::testing::check_gradients;

TEST_CASE("decompose oracle") {
  auto s = RawSeries::univariate({2, 4, 6, 8});
  auto g = decompose(s, 4);
  REQUIRE(g.tokens.size() == 1);
  CHECK(g.at(0, 0).mean == 5.0);
  CHECK(g.at(0, 0).std == doctest::Approx(std::sqrt(5.0)));
  CHECK(g.at(0, 0).shape[0] == doctest::Approx(-3.0 / std::sqrt(5.0)));
}

TEST_CASE("decompose: constant windows and errors") {
  auto s = RawSeries::univariate({3, 3, 3, 3, 1, 2, 3, 4});
  auto g = decompose(s, 4);
  CHECK(g.at(0, 0).mean == 3.0);
  CHECK(g.at(0, 0).std == 0.0);
  for (double v : g.at(0, 0).shape) CHECK(v == 0.0);
  CHECK_THROWS_AS(decompose(RawSeries::univariate({1, 2, 3}), 2), UsageError);
  CHECK_THROWS_AS(decompose(RawSeries::univariate({1, 2}), 1), UsageError);
  auto r = reconstruct(g);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.values[i] == 3.0);
  for (std::size_t i = 4; i < 8; ++i) CHECK(r.values[i] == doctest::Approx(s.values[i]).epsilon(1e-12));
}

TEST_CASE("shape tokens are zero-mean with unit std above the floor") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(10.0, 3.0);
  std::vector<double> v(64);
  for (auto& x : v) x = n(rng);
  auto g = decompose(RawSeries::univariate(v), 16);
  for (const auto& t : g.tokens) {
    double m = 0, sq = 0;
    for (double x : t.shape) m += x / 16;
    for (double x : t.shape) sq += (x - m) * (x - m) / 16;
    CHECK(std::fabs(m) < 1e-12);
    CHECK(std::sqrt(sq) == doctest::Approx(1.0));
  }
}

TEST_CASE("round trip below the std floor is exact") {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = 1e-7 * static_cast<double>(i % 3);
  auto s = RawSeries::univariate(v);
  auto r = reconstruct(decompose(s, 16));
  for (std::size_t i = 0; i < 16; ++i) CHECK(r.values[i] == doctest::Approx(v[i]).epsilon(1e-9));
}

TEST_CASE("multichannel decompose keeps channel order") {
  RawSeries s(2, 4, {1, 2, 3, 4, 10, 10, 10, 10});
  auto g = decompose(s, 2);
  CHECK(g.channels == 2);
  CHECK(g.at(1, 0).mean == 10.0);
  auto r = reconstruct(g);
  for (std::size_t i = 0; i < 8; ++i) CHECK(r.values[i] == doctest::Approx(s.values[i]).epsilon(1e-12));
  auto alone = decompose(RawSeries::univariate({10, 10, 10, 10}), 2);
  CHECK(alone.at(0, 1).mean == g.at(1, 1).mean);
}

TEST_CASE("resize_linear oracle") {
  auto r = resize_linear(RawSeries::univariate({0, 2}), 3);
  CHECK(r.values == std::vector<double>{0, 1, 2});
  auto c = resize_linear(RawSeries::univariate({7}), 4);
  CHECK(c.values == std::vector<double>{7, 7, 7, 7});
  auto d = resize_linear(RawSeries::univariate({1, 5, 3, 9, 2}), 13);
  CHECK(d.values.front() == 1);
  CHECK(d.values.back() == 2);
  CHECK_THROWS_AS(resize_linear(RawSeries::univariate({0, 1}), 1), UsageError);
}

TEST_CASE("random_resized_crop: deterministic, in range, fixed output length") {
  std::vector<double> v(100);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto s = RawSeries::univariate(v, 1, "x");
  auto a = random_resized_crop(s, 42, 0.8, 64);
  auto b = random_resized_crop(s, 42, 0.8, 64);
  CHECK(a.values == b.values);
  CHECK(a.length == 64);
  CHECK(a.label == 1);
  // Monotone input stays monotone; the crop spans at least 80% of it.
  CHECK(a.values.back() - a.values.front() >= 79.0 - 1e-9);
  for (std::size_t i = 1; i < a.length; ++i) CHECK(a.values[i] >= a.values[i - 1]);
  auto full = random_resized_crop(s, 1, 1.0, 100);
  CHECK(full.values == s.values);
  CHECK_THROWS_AS(random_resized_crop(s, 1, 0.0, 10), UsageError);
}

TEST_CASE("fit_length") {
  CHECK(fit_length(100, 16) == 112);
  CHECK(fit_length(512, 16) == 512);
  CHECK(fit_length(2000, 16) == 512);
  CHECK(fit_length(3, 16) == 16);
}

TEST_CASE("scale weights oracle") {
  NmeConfig c;
  c.scales = {0.1, 1.0, 10.0};
  auto w = scale_weights(1.0, c);
  // |ln(1 + 1e-6)| ~ 1e-6 dominates |ln(10)| and |ln(0.1)|.
  const double r0 = 1.0 / std::fabs(std::log(10.0 + 1e-6));
  const double r1 = 1.0 / std::fabs(std::log(1.0 + 1e-6));
  const double r2 = 1.0 / std::fabs(std::log(0.1 + 1e-6));
  const double z = r0 + r1 + r2;
  CHECK(w[0] == doctest::Approx(r0 / z).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(r1 / z).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(r2 / z).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(4.3e-7).epsilon(0.01));
  CHECK(w[1] == doctest::Approx(0.9999991).epsilon(1e-7));
}

TEST_CASE("scale weights: zero and the clamp") {
  NmeConfig c;
  auto w0 = scale_weights(0.0, c);
  double sum = 0;
  for (double v : w0) sum += v;
  CHECK(sum == doctest::Approx(1.0));
  // ln(eps) is the same for every scale at x = 0: uniform weights.
  for (double v : w0) CHECK(v == doctest::Approx(1.0 / 9));
  NmeConfig one;
  one.scales = {1.0};
  one.epsilon = 1e-300;
  auto w1 = scale_weights(1.0, one);
  CHECK(w1[0] == 1.0);
  c.weighted = false;
  for (double v : ensemble_weights(123.0, c)) CHECK(v == doctest::Approx(1.0 / 9));
}

namespace {

ParamStore<double> nme_store(const NmeConfig& c, std::uint64_t seed) {
  ParamStore<double> s;
  std::mt19937_64 rng(seed);
  init_nme_params(s, "e", c, rng);
  return s;
}

}  // namespace

TEST_CASE("basic block: x = 0 gives LN(b) independent of k") {
  NmeConfig c;
  c.embed_dim = 8;
  c.scales = {1.0};
  auto s = nme_store(c, 3);
  auto x = Var<double>::constant(Tensor<double>::vector({0.0}));
  auto y = basic_block(x, 1.0, s, "e.scale0").value();
  auto b = Var<double>::constant(s.value("e.scale0.b").reshaped(Shape{1, 8}));
  auto ref = ops::layer_norm(b, s.get("e.scale0.gamma"), s.get("e.scale0.beta")).value();
  for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  auto y3 = basic_block(x, 1e3, s, "e.scale0").value();
  for (std::size_t i = 0; i < 8; ++i) CHECK(y3[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("basic block is equivariant: block(x, k) == block(x/k, 1)") {
  NmeConfig c;
  c.embed_dim = 8;
  c.scales = {1.0};
  auto s = nme_store(c, 4);
  for (double k : {1e-4, 1e-2, 1e3}) {
    for (double x : {0.3, -7.0, 1234.5}) {
      auto a = basic_block(Var<double>::constant(Tensor<double>::vector({x})), k, s, "e.scale0").value();
      auto b = basic_block(Var<double>::constant(Tensor<double>::vector({x / k})), 1.0, s, "e.scale0").value();
      for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("nme gradients match finite differences (f64)") {
  NmeConfig c;
  c.embed_dim = 6;
  auto s = nme_store(c, 9);
  const auto xs = Tensor<double>::vector({3e-4, -0.02, 0.7, 45.0, -3e3});
  auto target = nutime::testing::random_tensor(Shape{5, 6}, 10);
  auto f = [&] {
    auto e = nme_embed(Var<double>::constant(xs), c, s, "e");
    return ops::sum(ops::mul(e, Var<double>::constant(target)));
  };
  auto rep = check_gradients(s, f, 6);
  INFO("worst " << rep.worst_name << " = " << rep.worst);
  CHECK(rep.worst < 1e-3);
  CHECK(rep.checked > 0);
}

TEST_CASE("weighted ensemble beats the plain average at a matching scale") {
  NmeConfig c;
  c.embed_dim = 16;
  auto s = nme_store(c, 21);
  const double x = 1e3;
  auto xv = Var<double>::constant(Tensor<double>::vector({x}));
  auto match = basic_block(xv, 1e3, s, nme_scale_prefix("e", 7)).value();
  auto cosine = [&](const Tensor<double>& a) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      d += a[i] * match[i];
      na += a[i] * a[i];
      nb += match[i] * match[i];
    }
    return d / std::sqrt(na * nb);
  };
  const double weighted = cosine(nme_embed(xv, c, s, "e").value());
  c.weighted = false;
  const double plain = cosine(nme_embed(xv, c, s, "e").value());
  CHECK(weighted > plain);
}

TEST_CASE("nme config validation") {
  NmeConfig c;
  c.scales = {1.0, 0.1};
  CHECK_THROWS_AS(c.validate(), UsageError);
  c.scales = {};
  CHECK_THROWS_AS(c.validate(), UsageError);
  c.scales = {1.0};
  c.epsilon = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}
