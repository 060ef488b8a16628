// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

// Command-line front end. Talks to the library only through nutime.h.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nutime/nutime.h"

using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Failure {
  int code;
  std::string message;
};

int exit_code(nt_status s) {
  switch (s) {
    case NT_OK: return kOk;
    case NT_ERR_USAGE: return kUsage;
    case NT_ERR_NUMERIC: return kNumeric;
    default: return kData;
  }
}

void check(nt_status s, const std::string& what) {
  if (s == NT_OK) return;
  std::string msg = what + ": " + nt_last_error();
  const std::string detail = nt_last_error_detail();
  if (!detail.empty()) msg += "\nstate dump:\n" + detail;
  throw Failure{exit_code(s), msg};
}

struct CString {
  char* p = nullptr;
  ~CString() { nt_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct Dataset {
  nt_dataset* p = nullptr;
  ~Dataset() { nt_dataset_free(p); }
};

struct ModelHandle {
  nt_model* p = nullptr;
  ~ModelHandle() { nt_model_free(p); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kData, "cannot open " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Failure{kData, "cannot write " + path};
}

bool is_dir_like(const std::string& p) {
  std::error_code ec;
  return std::filesystem::is_directory(p, ec) || std::filesystem::path(p).extension() == ".json";
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool f64 = false;
  std::string config;
  std::optional<std::size_t> max_len;
};

/// Resolved run configuration: defaults <- config file <- flags.
struct Resolved {
  std::string json_text;
  std::string hash;
};

Resolved resolve(const Globals& g, json overrides) {
  if (g.seed) overrides["seed"] = *g.seed;
  if (g.f64) overrides["f64"] = true;
  if (g.max_len) overrides["max_len_filter"] = *g.max_len;
  std::optional<std::size_t> threads = g.threads;
  if (!threads) {
    if (const char* env = std::getenv("NUTIME_THREADS")) {
      try {
        threads = static_cast<std::size_t>(std::stoul(env));
      } catch (const std::exception&) {
        throw Failure{kUsage, std::string("NUTIME_THREADS is not a number: ") + env};
      }
    }
  }
  if (threads) overrides["threads"] = *threads;
  const std::string file = g.config.empty() ? std::string{} : read_file(g.config);
  CString text, hash;
  const std::string patch = overrides.empty() ? std::string{} : overrides.dump();
  check(nt_config_resolve(file.empty() ? nullptr : file.c_str(), patch.empty() ? nullptr : patch.c_str(), &text.p,
                          &hash.p),
        "config");
  Resolved r{text.str(), hash.str()};
  const json cfg = json::parse(r.json_text);
  check(nt_set_threads(cfg.at("threads").get<std::size_t>()), "threads");
  std::cerr << "# config " << r.hash << "\n" << r.json_text;
  return r;
}

bool f64_of(const Resolved& r) { return json::parse(r.json_text).at("f64").get<bool>(); }

std::size_t max_len_of(const Resolved& r) { return json::parse(r.json_text).at("max_len_filter").get<std::size_t>(); }

void load_dataset(Dataset& d, const std::string& path, const std::string& split, const Resolved& r) {
  check(nt_dataset_load(path.c_str(), split.c_str(), max_len_of(r), &d.p), "load " + path);
}

/// `path` names a split file, or a dataset directory/manifest whose split
/// `split` is used.
void load_split(Dataset& d, const std::string& path, const std::string& split, const Resolved& r) {
  load_dataset(d, path, is_dir_like(path) ? split : "train", r);
}

void load_model(ModelHandle& m, const std::string& path, const Resolved& r) {
  check(nt_model_load(path.c_str(), f64_of(r) ? 1 : 0, &m.p), "load checkpoint " + path);
}

std::string metadata(const std::string& command, const Resolved& r) {
  return json{{"command", command}, {"config", json::parse(r.json_text)}, {"config_hash", r.hash}}.dump();
}

void report(const std::string& metrics_path, const std::string& command, const std::string& dataset,
            const std::string& split, const Resolved& r, const std::string& metrics_json) {
  CString table;
  check(nt_metrics_append(metrics_path.c_str(), command.c_str(), dataset.c_str(), split.c_str(), r.json_text.c_str(),
                          metrics_json.c_str(), &table.p),
        "metrics");
  std::cout << table.str() << std::flush;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerically multi-scaled time-series encoder: pretraining, fine-tuning and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--threads", g.threads, "Worker threads (1 = deterministic; env NUTIME_THREADS)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--f64", g.f64, "Compute in double precision");
  app.add_option("--config", g.config, "JSON run configuration; flags override it")->check(CLI::ExistingFile);
  app.add_option("--max-len", g.max_len, "Drop series longer than this when loading");

  json ov;  // per-command overrides

  // pretrain
  std::string data, out, loss_csv, split = "train";
  std::optional<std::size_t> epochs, batch;
  std::optional<double> lr;
  std::string encoding;
  auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining of an encoder");
  pre->add_option("--data", data, "Dataset directory, manifest or TSV")->required();
  pre->add_option("--out", out, "Output checkpoint")->required();
  pre->add_option("--split", split, "Manifest split to train on");
  pre->add_option("--loss-csv", loss_csv, "Per-epoch loss log (default: <out>.loss.csv)");
  pre->add_option("--epochs", epochs, "Pretraining epochs");
  pre->add_option("--batch-size", batch, "Batch size");
  pre->add_option("--lr", lr, "Base learning rate");
  pre->add_option("--encoding", encoding, "nme | zscore | instance_norm | identity");

  // finetune
  std::string ckpt, train_path, val_path, test_path, metrics_path;
  std::optional<std::size_t> ensemble;
  auto* ft = app.add_subcommand("finetune", "Supervised fine-tuning (from scratch without --ckpt)");
  ft->add_option("--ckpt", ckpt, "Pretrained checkpoint");
  ft->add_option("--train", train_path, "Training split (TSV or dataset directory)")->required();
  ft->add_option("--val", val_path, "Validation split (defaults to the dataset's val split)");
  ft->add_option("--test", test_path, "Test split");
  ft->add_option("--out", out, "Output checkpoint")->required();
  ft->add_option("--metrics", metrics_path, "Metrics CSV to append to");
  ft->add_option("--epochs", epochs, "Fine-tuning epochs");
  ft->add_option("--batch-size", batch, "Batch size");
  ft->add_option("--lr", lr, "Learning rate");
  ft->add_option("--ensemble", ensemble, "Average the logits of this many seeded runs");
  ft->add_option("--encoding", encoding, "Encoding for from-scratch models");

  auto* ev = app.add_subcommand("eval", "Classification metrics of a fine-tuned checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--test", test_path, "Test split")->required();
  ev->add_option("--metrics", metrics_path, "Metrics CSV to append to");

  std::optional<std::size_t> shots, episodes, k;
  auto* fs = app.add_subcommand("fewshot", "Few-shot episodes: support from train, queries from test");
  fs->add_option("--ckpt", ckpt, "Checkpoint")->required();
  fs->add_option("--data", data, "Dataset directory with train and test splits")->required();
  fs->add_option("--shots", shots, "Shots per class");
  fs->add_option("--episodes", episodes, "Episodes");
  fs->add_option("--metrics", metrics_path, "Metrics CSV to append to");

  auto* cl = app.add_subcommand("cluster", "K-means on representations");
  cl->add_option("--ckpt", ckpt, "Checkpoint")->required();
  cl->add_option("--data", data, "Dataset (directory, manifest or TSV)")->required();
  cl->add_option("--split", split, "Split to cluster");
  cl->add_option("--k", k, "Number of clusters");
  cl->add_option("--metrics", metrics_path, "Metrics CSV to append to");

  std::string normal_path;
  std::optional<double> percentile;
  auto* an = app.add_subcommand("anomaly", "Centroid-distance anomaly detection (test label 0 = normal)");
  an->add_option("--ckpt", ckpt, "Checkpoint")->required();
  an->add_option("--normal", normal_path, "Normal-only training series")->required();
  an->add_option("--test", test_path, "Labelled test series")->required();
  an->add_option("--percentile", percentile, "Threshold percentile of normal scores");
  an->add_option("--metrics", metrics_path, "Metrics CSV to append to");

  std::string input;
  auto* em = app.add_subcommand("embed", "Write one representation row per series");
  em->add_option("--ckpt", ckpt, "Checkpoint")->required();
  em->add_option("--input", input, "Series (TSV or dataset)")->required();
  em->add_option("--out", out, "Output CSV")->required();

  std::size_t index = 0;
  auto* at = app.add_subcommand("attn", "CLS attention of every layer and head");
  at->add_option("--ckpt", ckpt, "Checkpoint")->required();
  at->add_option("--input", input, "Series (TSV or dataset)")->required();
  at->add_option("--index", index, "Row of the input to inspect");
  at->add_option("--out", out, "Output JSON")->required();

  std::string spec_path;
  auto* sy = app.add_subcommand("synth", "Generate the synthetic multi-scale dataset");
  sy->add_option("--spec", spec_path, "Generator spec JSON (defaults when absent)");
  sy->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (!encoding.empty()) ov["model"]["encoding"] = encoding;

    if (*pre) {
      if (epochs) ov["pretrain"]["epochs"] = *epochs;
      if (batch) ov["pretrain"]["batch_size"] = *batch;
      if (lr) ov["pretrain"]["base_lr"] = *lr;
      const Resolved r = resolve(g, ov);
      Dataset d;
      load_split(d, data, split, r);
      ModelHandle m;
      CString log;
      check(nt_pretrain(r.json_text.c_str(), d.p, &m.p, &log.p), "pretrain");
      check(nt_model_save(m.p, out.c_str(), metadata("pretrain", r).c_str()), "save " + out);
      write_file(loss_csv.empty() ? out + ".loss.csv" : loss_csv, log.str());
      std::cout << log.str();
      return kOk;
    }

    if (*ft) {
      if (epochs) ov["finetune"]["epochs"] = *epochs;
      if (batch) ov["finetune"]["batch_size"] = *batch;
      if (lr) ov["finetune"]["lr"] = *lr;
      if (ensemble) ov["finetune"]["ensemble"] = *ensemble;
      const Resolved r = resolve(g, ov);
      Dataset tr, va, te;
      load_split(tr, train_path, "train", r);
      if (val_path.empty()) {
        if (!is_dir_like(train_path)) throw Failure{kUsage, "--val is required when --train is a file"};
        val_path = train_path;
      }
      load_split(va, val_path, "val", r);
      if (!test_path.empty()) load_split(te, test_path, "test", r);
      ModelHandle init, outm;
      if (!ckpt.empty()) load_model(init, ckpt, r);
      CString rep;
      check(nt_finetune(r.json_text.c_str(), init.p, tr.p, va.p, te.p, &outm.p, &rep.p), "finetune");
      check(nt_model_save(outm.p, out.c_str(), metadata("finetune", r).c_str()), "save " + out);
      const json jr = json::parse(rep.str());
      report(metrics_path, "finetune", train_path, "val", r, jr.at("val").dump());
      if (jr.contains("test")) report(metrics_path, "finetune", test_path, "test", r, jr.at("test").dump());
      return kOk;
    }

    if (*ev) {
      const Resolved r = resolve(g, ov);
      ModelHandle m;
      load_model(m, ckpt, r);
      Dataset te;
      load_split(te, test_path, "test", r);
      CString res;
      check(nt_evaluate(m.p, te.p, &res.p), "eval");
      report(metrics_path, "eval", test_path, "test", r, res.str());
      return kOk;
    }

    if (*fs) {
      if (shots) ov["fewshot"]["shots"] = *shots;
      if (episodes) ov["fewshot"]["episodes"] = *episodes;
      const Resolved r = resolve(g, ov);
      ModelHandle m;
      load_model(m, ckpt, r);
      Dataset pool, query;
      load_dataset(pool, data, "train", r);
      load_dataset(query, data, "test", r);
      CString res;
      check(nt_fewshot(r.json_text.c_str(), m.p, pool.p, query.p, &res.p), "fewshot");
      report(metrics_path, "fewshot", data, "test", r, res.str());
      return kOk;
    }

    if (*cl) {
      if (k) ov["cluster"]["k"] = *k;
      const Resolved r = resolve(g, ov);
      ModelHandle m;
      load_model(m, ckpt, r);
      Dataset d;
      load_split(d, data, split == "train" && is_dir_like(data) ? "test" : split, r);
      CString res;
      check(nt_cluster(r.json_text.c_str(), m.p, d.p, &res.p), "cluster");
      report(metrics_path, "cluster", data, split, r, res.str());
      return kOk;
    }

    if (*an) {
      if (percentile) ov["anomaly"]["percentile"] = *percentile;
      const Resolved r = resolve(g, ov);
      ModelHandle m;
      load_model(m, ckpt, r);
      Dataset nd, td;
      load_split(nd, normal_path, "train", r);
      load_split(td, test_path, "test", r);
      CString res;
      check(nt_anomaly(r.json_text.c_str(), m.p, nd.p, td.p, &res.p), "anomaly");
      report(metrics_path, "anomaly", test_path, "test", r, res.str());
      return kOk;
    }

    if (*em) {
      const Resolved r = resolve(g, ov);
      ModelHandle m;
      load_model(m, ckpt, r);
      Dataset d;
      load_split(d, input, "test", r);
      std::size_t n = 0, dim = 0;
      check(nt_dataset_size(d.p, &n, nullptr, nullptr), "dataset");
      CString info;
      check(nt_model_info(m.p, &info.p), "model");
      const std::size_t width = json::parse(info.str()).at("config").at("d_model").get<std::size_t>();
      std::vector<double> buf(n * width);
      check(nt_model_embed(m.p, d.p, buf.data(), buf.size(), &dim), "embed");
      std::ostringstream os;
      os.precision(9);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) os << (j ? "," : "") << buf[i * dim + j];
        os << '\n';
      }
      write_file(out, os.str());
      return kOk;
    }

    if (*at) {
      const Resolved r = resolve(g, ov);
      ModelHandle m;
      load_model(m, ckpt, r);
      Dataset d;
      load_split(d, input, "test", r);
      CString res;
      check(nt_model_attention(m.p, d.p, index, &res.p), "attn");
      write_file(out, res.str() + "\n");
      return kOk;
    }

    if (*sy) {
      // Validates --config even though the generator only reads its own spec.
      if (!g.config.empty()) resolve(g, ov);
      json spec;
      if (!spec_path.empty()) {
        spec = json::parse(read_file(spec_path));
      }
      if (g.seed) spec["seed"] = *g.seed;
      const std::string text = spec.is_null() ? std::string{} : spec.dump();
      check(nt_synth_write(text.empty() ? nullptr : text.c_str(), out.c_str()), "synth");
      std::cout << "wrote " << out << "/manifest.json\n";
      return kOk;
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const json::exception& e) {
    std::cerr << "error: invalid JSON: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
