// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include <cmath>

#include "doctest.h"
#include "nutime/errors.hpp"
#include "nutime/model.hpp"
#include "support.hpp"

using namespace nutime;
using nutime::testing::check_gradients;
using nutime::testing::tiny_config;
using nutime::testing::wave;

TEST_CASE("default configuration parameter count") {
  ModelConfig c;
  CHECK(parameter_count(c) == 1210048);
  auto m = create_model<float>(c, 0);
  CHECK(m.params.numel() == 1210048);
}

TEST_CASE("parameter_count matches created stores") {
  for (auto mode : {EncodingMode::nme, EncodingMode::zscore, EncodingMode::identity}) {
    auto c = tiny_config(3);
    c.encoding = mode;
    c.n_channels = 2;
    auto m = create_model<double>(c, 1);
    CHECK(m.params.numel() == parameter_count(c));
  }
}

TEST_CASE("create_model is deterministic in the seed") {
  auto a = create_model<double>(tiny_config(), 5);
  auto b = create_model<double>(tiny_config(), 5);
  auto c = create_model<double>(tiny_config(), 6);
  bool differs = false;
  for (const auto& name : a.params.names()) {
    CHECK(nutime::testing::vec(a.params.value(name)) == nutime::testing::vec(b.params.value(name)));
    if (nutime::testing::vec(a.params.value(name)) != nutime::testing::vec(c.params.value(name))) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("sinusoidal positional encoding") {
  auto pe = sinusoidal_pe<double>(4, 6);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe.at(1, 1) == doctest::Approx(std::cos(1.0)));
  CHECK(pe.at(2, 2) == doctest::Approx(std::sin(2.0 / std::pow(10000.0, 2.0 / 6.0))));
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = tiny_config();
  c.window_size = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  CHECK(parse_encoding("instance_norm") == EncodingMode::instance_norm);
  CHECK(to_string(EncodingMode::zscore) == "zscore");
  CHECK_THROWS_AS(parse_encoding("bogus"), UsageError);
}

TEST_CASE("encode shapes and batch consistency") {
  auto m = create_model<double>(tiny_config(), 2);
  std::vector<RawSeries> batch{wave(16, 1), wave(16, 2, 100.0)};
  auto reps = encode_batch(m, std::span<const RawSeries>(batch)).value();
  CHECK(reps.shape() == Shape{2, 8});
  auto single = encode(m, batch[1]);
  for (std::size_t i = 0; i < 8; ++i) CHECK(single[i] == doctest::Approx(reps.at(1, i)).epsilon(1e-10));
  auto logits = classify(m, batch[0]);
  CHECK(logits.size() == 2);
  // Length must be a multiple of the window.
  std::vector<RawSeries> bad{wave(15, 1)};
  CHECK_THROWS(encode_batch(m, std::span<const RawSeries>(bad)));
}

TEST_CASE("nme tokens see the offset; instance_norm does not") {
  auto base = wave(16, 3);
  auto shifted = base;
  for (double& v : shifted.values) v += 1e3;
  auto m = create_model<double>(tiny_config(), 4);
  auto a = encode(m, base), b = encode(m, shifted);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::fabs(a[i] - b[i]);
  CHECK(diff > 1e-3);
  auto c = tiny_config();
  c.encoding = EncodingMode::instance_norm;
  auto mi = create_model<double>(c, 4);
  auto ai = encode(mi, base), bi = encode(mi, shifted);
  for (std::size_t i = 0; i < ai.size(); ++i) CHECK(ai[i] == doctest::Approx(bi[i]).epsilon(1e-6));
}

TEST_CASE("baseline preprocessing") {
  auto s = RawSeries::univariate({1, 2, 3, 4, 5, 6, 7, 8});
  auto in = baseline_preprocess(s, EncodingMode::instance_norm, 0, 1);
  double m = 0, v = 0;
  for (double x : in.values) m += x / 8;
  for (double x : in.values) v += (x - m) * (x - m) / 8;
  CHECK(std::fabs(m) < 1e-12);
  CHECK(v == doctest::Approx(1.0));
  auto z = baseline_preprocess(s, EncodingMode::zscore, 4.5, 2.0);
  CHECK(z.values[0] == -1.75);
  CHECK_THROWS_AS(baseline_preprocess(s, EncodingMode::zscore, 0, 0), UsageError);
  CHECK(baseline_preprocess(s, EncodingMode::identity, 0, 1).values == s.values);
}

TEST_CASE("identity mode saturates at large inputs") {
  auto c = tiny_config();
  c.encoding = EncodingMode::identity;
  auto m = create_model<double>(c, 8);
  auto s = wave(16, 9);
  for (double& v : s.values) v = 1e6 + v;
  auto t = s;
  for (double& v : t.values) v *= 10.0;
  std::vector<RawSeries> one{s}, two{t};
  auto a = window_tokens(m, std::span<const RawSeries>(one), 0).value();
  auto b = window_tokens(m, std::span<const RawSeries>(two), 0).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-3));
}

TEST_CASE("channel merge starts near the channel mean") {
  auto m = create_model<double>(tiny_config(), 10);
  add_channel_merge(m, 2, 11);
  CHECK(m.config.n_channels == 2);
  CHECK(m.params.contains("embed.merge.weight"));
  RawSeries two(2, 8, {1, 2, 3, 4, 5, 6, 7, 8, 1, 2, 3, 4, 5, 6, 7, 8});
  auto single = encode(create_model<double>(tiny_config(), 10), RawSeries::univariate({1, 2, 3, 4, 5, 6, 7, 8}));
  auto merged = encode(m, two);
  for (std::size_t i = 0; i < single.size(); ++i) CHECK(merged[i] == doctest::Approx(single[i]).epsilon(0.05).scale(1.0));
  CHECK(m.params.numel() == parameter_count(m.config));
}

TEST_CASE("classification head reset and encoder_params") {
  auto m = create_model<double>(tiny_config(2), 12);
  reset_classification_head(m, 5, 13);
  CHECK(m.config.n_classes == 5);
  CHECK(m.params.value("head.fc2.weight").shape() == Shape{8, 5});
  auto enc = encoder_params(m);
  for (const auto& n : enc.names()) CHECK(n.rfind("head.", 0) != 0);
  CHECK(enc.numel() + 8 * 8 + 8 + 8 * 5 + 5 == m.params.numel());
}

TEST_CASE("attention map rows are distributions") {
  auto m = create_model<double>(tiny_config(), 14);
  auto map = cls_attention(m, wave(16, 15));
  CHECK(map.layers == 1);
  CHECK(map.heads == 2);
  CHECK(map.patches == 4);
  for (std::size_t h = 0; h < 2; ++h) {
    double total = map.cls_to_cls[h];
    for (std::size_t p = 0; p < 4; ++p) total += map.at(0, h, p);
    CHECK(total == doctest::Approx(1.0));
  }
  CHECK(map.head_mean(0).size() == 4);
}

TEST_CASE("embed_shape gradients") {
  auto m = create_model<double>(tiny_config(), 16);
  auto shapes = nutime::testing::random_tensor(Shape{3, 4}, 17);
  auto target = nutime::testing::random_tensor(Shape{3, 6}, 18);
  auto rep = check_gradients(m.params, [&] {
    return ops::sum(ops::mul(embed_shape(m, Var<double>::constant(shapes)), Var<double>::constant(target)));
  });
  CHECK(rep.checked == 4);
  CHECK(rep.worst < 1e-3);
}

TEST_CASE("full classify cross-entropy gradients on a 2-window input") {
  auto m = create_model<double>(tiny_config(), 19);
  std::vector<RawSeries> batch{wave(8, 20, 0.5, 0), wave(8, 21, 50.0, 1)};
  const std::vector<int> labels{0, 1};
  auto rep = check_gradients(m.params, [&] {
    return ops::cross_entropy(classify_batch(m, std::span<const RawSeries>(batch)), std::span<const int>(labels));
  });
  INFO("worst " << rep.worst_name << " = " << rep.worst);
  CHECK(rep.worst < 1e-3);
  CHECK(rep.checked > 20);
}

TEST_CASE("dropout is inactive at inference and seeded in training") {
  auto c = tiny_config();
  c.dropout = 0.5;
  auto m = create_model<double>(c, 22);
  std::vector<RawSeries> batch{wave(16, 23)};
  std::span<const RawSeries> sp(batch);
  auto e1 = encode_batch(m, sp).value();
  auto e2 = encode_batch(m, sp).value();
  CHECK(nutime::testing::vec(e1) == nutime::testing::vec(e2));
  ForwardOptions<double> t1{true, 1, nullptr}, t2{true, 1, nullptr}, t3{true, 2, nullptr};
  CHECK(nutime::testing::vec(encode_batch(m, sp, t1).value()) == nutime::testing::vec(encode_batch(m, sp, t2).value()));
  CHECK(nutime::testing::vec(encode_batch(m, sp, t1).value()) != nutime::testing::vec(encode_batch(m, sp, t3).value()));
}
