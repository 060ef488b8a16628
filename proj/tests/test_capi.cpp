// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

// Exercises the shared library through its C interface only.

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "nutime/nutime.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  nt_string_free(s);
  return out;
}

const char* kTiny = R"({"seed": 3, "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "mlp_dim": 16,
  "window_size": 4, "shape_embed_dim": 6, "mean_std_embed_dim": 4, "n_classes": 2,
  "nme": {"scales": [0.01, 1, 100]}},
  "pretrain": {"epochs": 1, "batch_size": 4, "warmup_epochs": 0, "crop_len": 16, "proj_hidden": 8,
               "proj_dim": 4, "pred_hidden": 8},
  "finetune": {"epochs": 2, "batch_size": 4, "lr": 0.001},
  "probe": {"steps": 20}, "fewshot": {"shots": 2, "episodes": 2, "steps": 2}})";

nt_dataset* toy(std::size_t n) {
  std::vector<double> v;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const double base = i % 2 ? 100.0 : 0.01;
    for (std::size_t t = 0; t < 16; ++t) v.push_back(base * (1.0 + 0.1 * ((t * 7 + i) % 5)));
    labels.push_back(static_cast<int>(i % 2));
  }
  nt_dataset* ds = nullptr;
  REQUIRE(nt_dataset_from_values(v.data(), n, 1, 16, labels.data(), &ds) == NT_OK);
  return ds;
}

}  // namespace

TEST_CASE("status codes and error text") {
  nt_dataset* ds = nullptr;
  CHECK(nt_dataset_load("/nonexistent/path.tsv", nullptr, 0, &ds) != NT_OK);
  CHECK(std::strlen(nt_last_error()) > 0);
  CHECK(ds == nullptr);
  nt_model* m = nullptr;
  CHECK(nt_model_create(R"({"bogus": 1})", &m) == NT_ERR_USAGE);
  CHECK(std::string(nt_last_error()).find("bogus") != std::string::npos);
  CHECK(nt_model_create(nullptr, nullptr) == NT_ERR_USAGE);
  CHECK(std::strlen(nt_version()) > 0);
  CHECK(nt_set_threads(0) == NT_ERR_USAGE);
  CHECK(nt_set_threads(1) == NT_OK);
}

TEST_CASE("config resolution") {
  char* resolved = nullptr;
  char* hash = nullptr;
  REQUIRE(nt_config_resolve(R"({"seed": 1})", R"({"seed": 2})", &resolved, &hash) == NT_OK);
  auto j = json::parse(take(resolved));
  CHECK(j.at("seed") == 2);
  CHECK(take(hash).size() == 16);
  char* def = nullptr;
  REQUIRE(nt_config_default(&def) == NT_OK);
  CHECK(json::parse(take(def)).contains("model"));
}

TEST_CASE("end-to-end through the C interface") {
  nt_dataset* train = toy(8);
  nt_dataset* test = toy(6);
  size_t n = 0, c = 0, t = 0;
  REQUIRE(nt_dataset_size(train, &n, &c, &t) == NT_OK);
  CHECK(n == 8);
  CHECK(t == 16);
  const double* vals = nullptr;
  int label = -2;
  REQUIRE(nt_dataset_series(train, 1, &vals, &c, &t, &label) == NT_OK);
  CHECK(label == 1);
  CHECK(nt_dataset_series(train, 99, &vals, &c, &t, &label) == NT_ERR_USAGE);

  nt_model* enc = nullptr;
  char* loss = nullptr;
  REQUIRE(nt_pretrain(kTiny, train, &enc, &loss) == NT_OK);
  CHECK(take(loss).rfind("epoch,mean_loss,lr,tau", 0) == 0);

  nt_model* tuned = nullptr;
  char* report = nullptr;
  REQUIRE(nt_finetune(kTiny, enc, train, train, test, &tuned, &report) == NT_OK);
  auto r = json::parse(take(report));
  CHECK(r.contains("val"));
  CHECK(r.at("test").at("top1").get<double>() >= 0.0);

  char* metrics = nullptr;
  REQUIRE(nt_evaluate(tuned, test, &metrics) == NT_OK);
  auto ev = json::parse(take(metrics));
  CHECK(ev.at("top1") == r.at("test").at("top1"));

  REQUIRE(nt_linear_probe(kTiny, enc, train, test, &metrics) == NT_OK);
  CHECK(json::parse(take(metrics)).contains("macro_f1"));
  REQUIRE(nt_fewshot(kTiny, enc, train, test, &metrics) == NT_OK);
  CHECK(json::parse(take(metrics)).at("episodes") == 2);
  REQUIRE(nt_cluster(kTiny, enc, test, &metrics) == NT_OK);
  CHECK(json::parse(take(metrics)).contains("nmi"));
  REQUIRE(nt_anomaly(kTiny, enc, train, test, &metrics) == NT_OK);
  CHECK(json::parse(take(metrics)).contains("auroc"));

  std::vector<double> reps(6 * 8);
  size_t d = 0;
  REQUIRE(nt_model_embed(enc, test, reps.data(), reps.size(), &d) == NT_OK);
  CHECK(d == 8);
  CHECK(nt_model_embed(enc, test, reps.data(), 3, &d) == NT_ERR_USAGE);

  char* attn = nullptr;
  REQUIRE(nt_model_attention(tuned, test, 0, &attn) == NT_OK);
  auto a = json::parse(take(attn));
  CHECK(a.at("layers").size() == 1);
  CHECK(a.at("layers")[0].size() == 2);
  CHECK(a.at("layers")[0][0].size() == 4);

  auto dir = fs::temp_directory_path() / "nutime-test-capi";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  REQUIRE(nt_model_save(tuned, path.c_str(), R"({"k": 1})") == NT_OK);
  nt_model* back = nullptr;
  REQUIRE(nt_model_load(path.c_str(), 0, &back) == NT_OK);
  REQUIRE(nt_evaluate(back, test, &metrics) == NT_OK);
  CHECK(json::parse(take(metrics)) == ev);
  char* info = nullptr;
  REQUIRE(nt_model_info(back, &info) == NT_OK);
  CHECK(json::parse(take(info)).at("precision") == "f32");

  const std::string csv = (dir / "m.csv").string();
  char* table = nullptr;
  REQUIRE(nt_metrics_append(csv.c_str(), "eval", "toy", "test", kTiny, ev.dump().c_str(), &table) == NT_OK);
  CHECK(take(table).find("top1") != std::string::npos);
  CHECK(fs::exists(csv));

  nt_model_free(back);
  nt_model_free(tuned);
  nt_model_free(enc);
  nt_dataset_free(train);
  nt_dataset_free(test);
}

TEST_CASE("synthetic data through the C interface") {
  auto dir = fs::temp_directory_path() / "nutime-test-capi-synth";
  fs::remove_all(dir);
  const char* spec = R"({"samples_per_class": 4, "val_per_class": 1, "test_per_class": 2, "length": 32})";
  REQUIRE(nt_synth_write(spec, dir.string().c_str()) == NT_OK);
  nt_dataset* ds = nullptr;
  REQUIRE(nt_dataset_load(dir.string().c_str(), "test", 0, &ds) == NT_OK);
  size_t n = 0, c = 0, t = 0;
  nt_dataset_size(ds, &n, &c, &t);
  CHECK(n == 4);
  CHECK(t == 32);
  double mean = 0, sd = 0;
  REQUIRE(nt_dataset_stats(ds, &mean, &sd) == NT_OK);
  CHECK(sd > 0);
  nt_dataset_free(ds);
  CHECK(nt_dataset_load(dir.string().c_str(), "nosuch", 0, &ds) != NT_OK);
  CHECK(nt_synth_write(R"({"length": 30})", dir.string().c_str()) == NT_ERR_USAGE);
}
