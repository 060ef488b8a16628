// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "nutime/checkpoint.hpp"
#include "nutime/config.hpp"
#include "nutime/dataset.hpp"
#include "nutime/errors.hpp"
#include "nutime/model.hpp"
#include "support.hpp"

using namespace nutime;
namespace fs = std::filesystem;
using nutime::testing::scratch_dir;
using nutime::testing::tiny_config;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double n = static_cast<double>(a.size() * b.size()) / static_cast<double>(a.size() + b.size());
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0;
  for (int k = 1; k <= 100; ++k) p += 2 * (k % 2 ? 1 : -1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("UCR TSV parsing and label remap") {
  auto dir = scratch_dir("tsv");
  write_text(dir / "a.tsv", "1\t0.5\t0.7\t0.9\n-1\t1e-3\t+2\t-4.5E2\n");
  auto d = load_ucr_tsv(dir / "a.tsv");
  REQUIRE(d.size() == 2);
  CHECK(*d[0].label == 1);
  CHECK(*d[1].label == 0);
  CHECK(d[0].values == std::vector<double>{0.5, 0.7, 0.9});
  CHECK(d[1].values == std::vector<double>{1e-3, 2, -450});
  CHECK(d[1].id.find(":2") != std::string::npos);
}

TEST_CASE("UCR TSV errors are located") {
  auto dir = scratch_dir("tsv-bad");
  write_text(dir / "ragged.tsv", "0\t1\t2\n1\t1\t2\t3\n");
  try {
    load_ucr_tsv(dir / "ragged.tsv");
    FAIL("ragged rows accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ragged.tsv:2") != std::string::npos);
  }
  write_text(dir / "nan.tsv", "0\t1\tnan\n");
  CHECK_THROWS_AS(load_ucr_tsv(dir / "nan.tsv"), DataError);
  write_text(dir / "junk.tsv", "0\t1\tabc\n");
  CHECK_THROWS_AS(load_ucr_tsv(dir / "junk.tsv"), DataError);
  write_text(dir / "empty.tsv", "");
  CHECK_THROWS_AS(load_ucr_tsv(dir / "empty.tsv"), DataError);
  CHECK_THROWS(load_ucr_tsv(dir / "missing.tsv"));
}

TEST_CASE("shared label map across splits and multichannel files") {
  auto dir = scratch_dir("splits");
  write_text(dir / "tr.tsv", "5\t1\t2\n7\t3\t4\n");
  write_text(dir / "te.tsv", "9\t1\t2\n5\t3\t4\n");
  auto s = load_ucr_splits({dir / "tr.tsv", dir / "te.tsv"});
  CHECK(*s[0][1].label == 1);
  CHECK(*s[1][0].label == 2);
  write_text(dir / "c0.tsv", "0\t1\t2\n1\t3\t4\n");
  write_text(dir / "c1.tsv", "0\t5\t6\n1\t7\t8\n");
  auto mc = load_multichannel({dir / "c0.tsv", dir / "c1.tsv"});
  CHECK(mc[1].channels == 2);
  CHECK(mc[1].values == std::vector<double>{3, 4, 7, 8});
  auto parts = split_multivariate(mc[1]);
  CHECK(parts.size() == 2);
  CHECK(parts[1].values == std::vector<double>{7, 8});
  write_text(dir / "c2.tsv", "1\t5\t6\n1\t7\t8\n");
  CHECK_THROWS_AS(load_multichannel({dir / "c0.tsv", dir / "c2.tsv"}), DataError);
}

TEST_CASE("TSV write round trip") {
  auto dir = scratch_dir("tsv-rt");
  std::vector<RawSeries> d{RawSeries::univariate({0.1, 1.0 / 3.0, -2e-9}, 0), RawSeries::univariate({5, 6, 7}, 1)};
  write_ucr_tsv(dir / "x.tsv", d);
  auto back = load_ucr_tsv(dir / "x.tsv");
  CHECK(back[0].values == d[0].values);
  CHECK(back[1].values == d[1].values);
}

TEST_CASE("filter and stats") {
  std::vector<RawSeries> d{RawSeries::univariate({1, 3}), RawSeries::univariate({1, 2, 3, 4, 5})};
  CHECK(filter_max_len(d, 3).size() == 1);
  CHECK(filter_max_len(d, 0).size() == 2);
  auto st = dataset_stats(std::vector<RawSeries>{RawSeries::univariate({1, 3})});
  CHECK(st.mean == 2.0);
  CHECK(st.std == 1.0);
}

TEST_CASE("synthetic generator: determinism and scale bounds") {
  SynthSpec spec;
  spec.samples_per_class = 16;
  spec.val_per_class = 2;
  spec.test_per_class = 4;
  spec.length = 64;
  auto a = generate_synth(spec), b = generate_synth(spec);
  CHECK(a.train.size() == 32);
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].values == b.train[i].values);
  for (const auto& s : a.train) {
    const double k = *s.label == 0 ? 1e-2 : 1e2;
    for (std::size_t w = 0; w < s.length / 16; ++w) {
      double m = 0;
      for (std::size_t i = 0; i < 16; ++i) m += s.values[w * 16 + i] / 16;
      CHECK(m >= 0.5 * k * (1 - 1e-9));
      CHECK(m <= 1.5 * k * (1 + 1e-9));
    }
  }
  spec.seed = 1;
  CHECK(generate_synth(spec).train[0].values != a.train[0].values);
  spec.length = 60;
  CHECK_THROWS_AS(spec.validate(), UsageError);
}

TEST_CASE("instance-normalised scale-mode classes are indistinguishable") {
  SynthSpec spec;
  spec.samples_per_class = 200;
  spec.length = 128;
  auto d = generate_synth(spec);
  std::vector<double> c0, c1;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pos(0, spec.length - 1);
  for (const auto& s : d.train) {
    auto n = baseline_preprocess(s, EncodingMode::instance_norm, 0, 1);
    (*s.label == 0 ? c0 : c1).push_back(n.values[pos(rng)]);
  }
  CHECK(ks_pvalue(c0, c1) > 0.01);
  // Sanity: the test does separate the raw values.
  std::vector<double> r0, r1;
  for (const auto& s : d.train) (*s.label == 0 ? r0 : r1).push_back(s.values[0]);
  CHECK(ks_pvalue(r0, r1) < 0.01);
}

TEST_CASE("synth spec JSON and manifest round trip") {
  SynthSpec spec;
  spec.samples_per_class = 4;
  spec.val_per_class = 1;
  spec.test_per_class = 2;
  spec.length = 32;
  spec.mode = SynthMode::shape;
  spec.families = {"sine", "sawtooth"};
  auto back = SynthSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());
  CHECK_THROWS_AS(SynthSpec::from_json(R"({"bogus": 1})"), UsageError);
  auto dir = scratch_dir("synth");
  auto man = write_synth(spec, dir);
  CHECK(man.n_classes == 2);
  auto loaded = load_data_arg(dir.string());
  CHECK(loaded.at("train").size() == 8);
  CHECK(loaded.at("test").size() == 4);
  auto via_file = load_data_arg((dir / "manifest.json").string());
  CHECK(via_file.at("val").size() == 2);
  auto tsv = load_data_arg((dir / "train.tsv").string());
  CHECK(tsv.at("train").size() == 8);
  auto m2 = load_manifest(dir / "manifest.json");
  CHECK(m2.to_json() == man.to_json());
  write_text(dir / "bad.json", R"({"name": "x", "n_channels": 1, "n_classes": 2, "splits": {}, "extra": 1})");
  CHECK_THROWS(load_manifest(dir / "bad.json"));
}

TEST_CASE("checkpoint round trip is bitwise") {
  auto dir = scratch_dir("ckpt");
  auto m = create_model<float>(tiny_config(2), 3);
  save_checkpoint(model_checkpoint(m, R"({"note":"x"})"), dir / "a.ckpt");
  auto loaded = model_from_checkpoint<float>(load_checkpoint(dir / "a.ckpt"));
  for (const auto& n : m.params.names()) CHECK(nutime::testing::vec(loaded.params.value(n)) == nutime::testing::vec(m.params.value(n)));
  CHECK(model_config_to_json(loaded.config) == model_config_to_json(m.config));
  save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  auto meta = nlohmann::json::parse(load_checkpoint(dir / "a.ckpt").metadata);
  CHECK(meta.at("note") == "x");
  auto m64 = model_from_checkpoint<double>(load_checkpoint(dir / "a.ckpt"));
  CHECK(m64.params.value("cls")[0] == static_cast<double>(m.params.value("cls")[0]));
}

TEST_CASE("corrupted checkpoints are rejected") {
  Checkpoint c;
  c.metadata = "{}";
  c.tensors.push_back({"a", Tensor<float>::vector({1, 2, 3})});
  c.tensors.push_back({"bb", Tensor<float>::matrix(2, 2, {4, 5, 6, 7})});
  const std::string good = encode_checkpoint(c);
  CHECK(encode_checkpoint(decode_checkpoint(good)) == good);

  // Offset field of the second entry: header, meta, count, first entry, then name/dtype/ndim/dims.
  const std::size_t first = 4 + 4 + 8 + 2 + 4;
  const std::size_t second = first + 4 + 1 + 1 + 4 + 8 + 8 + 8;
  const std::size_t offset_pos = second + 4 + 2 + 1 + 4 + 16;
  std::uint64_t off = 0;
  std::memcpy(&off, good.data() + offset_pos, 8);
  REQUIRE(off == 12);
  auto bad = good;
  bad[offset_pos] = 8;
  CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
  bad = good;
  bad[offset_pos] = 100;
  CHECK_THROWS_AS(decode_checkpoint(bad), DataError);

  bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
  bad = good;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(good + "z"), DataError);
  for (std::size_t cut = 0; cut < good.size(); cut += 7) CHECK_THROWS_AS(decode_checkpoint(good.substr(0, cut)), DataError);

  // Tensors that do not fit the stored configuration.
  auto m = create_model<float>(tiny_config(2), 1);
  auto ck = model_checkpoint(m);
  ck.tensors.pop_back();
  CHECK_THROWS_AS(model_from_checkpoint<float>(ck), DataError);
  ck = model_checkpoint(m);
  ck.tensors[0].value = Tensor<float>::vector({1});
  CHECK_THROWS_AS(model_from_checkpoint<float>(ck), DataError);
}

TEST_CASE("run config: strict keys, round trip and hash") {
  RunConfig d;
  auto r = RunConfig::from_json(d.to_json());
  CHECK(r.to_json() == d.to_json());
  CHECK(r.hash() == d.hash());
  CHECK(d.hash().size() == 16);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"sed": 1})"), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"d_modle": 4}})"), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"seed": "x"})"), UsageError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"d_model": -1}})"), UsageError);
  auto p = RunConfig::from_json(R"({"seed": 7, "finetune": {"epochs": 3}, "model": {"nme": {"scales": [1, 10]}}})");
  CHECK(p.seed == 7);
  CHECK(p.finetune.epochs == 3);
  CHECK(p.model.nme.scales == std::vector<double>{1, 10});
  CHECK(p.hash() != d.hash());
  auto mc = model_config_from_json(model_config_to_json(p.model));
  CHECK(model_config_to_json(mc) == model_config_to_json(p.model));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
}

TEST_CASE("metrics CSV is append-safe") {
  auto dir = scratch_dir("metrics");
  MetricsRecord r;
  r.command = "eval";
  r.dataset = "d";
  r.split = "test";
  r.config_hash = "abc";
  r.encoding = "nme";
  r.top1 = 0.5;
  append_metrics_csv(dir / "m.csv", r);
  append_metrics_csv(dir / "m.csv", r);
  std::ifstream in(dir / "m.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == metrics_csv_header());
  CHECK(lines[1] == lines[2]);
  CHECK(lines[1].find("abc") != std::string::npos);
  write_text(dir / "other.csv", "x,y\n");
  CHECK_THROWS_AS(append_metrics_csv(dir / "other.csv", r), DataError);
  CHECK(metrics_table(r).find("top1") != std::string::npos);
}
