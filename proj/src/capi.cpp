// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/nutime.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <variant>

#include "json.hpp"

#include "nutime/checkpoint.hpp"
#include "nutime/config.hpp"
#include "nutime/dataset.hpp"
#include "nutime/errors.hpp"
#include "nutime/eval.hpp"
#include "nutime/parallel.hpp"

using nlohmann::json;
using namespace nutime;

struct nt_dataset {
  std::vector<RawSeries> series;
};

struct nt_model {
  std::variant<Model<float>, Model<double>> m;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_detail;

template <typename Fn>
nt_status guarded(Fn&& fn) {
  g_error.clear();
  g_detail.clear();
  try {
    fn();
    return NT_OK;
  } catch (const UsageError& e) {
    g_error = e.what();
    return NT_ERR_USAGE;
  } catch (const DataError& e) {
    g_error = e.what();
    return NT_ERR_DATA;
  } catch (const NumericError& e) {
    g_error = e.what();
    g_detail = e.dump();
    return NT_ERR_NUMERIC;
  } catch (const IoError& e) {
    g_error = e.what();
    return NT_ERR_IO;
  } catch (const json::exception& e) {
    g_error = std::string("invalid JSON: ") + e.what();
    return NT_ERR_USAGE;
  } catch (const std::exception& e) {
    g_error = e.what();
    return NT_ERR_INTERNAL;
  } catch (...) {
    g_error = "unknown failure";
    return NT_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  if (!p) throw UsageError(std::string(what) + " must not be NULL");
}

RunConfig config_of(const char* text) { return text ? RunConfig::from_json(text) : RunConfig{}; }

json metrics_json(const Metrics& m) { return {{"top1", m.top1}, {"macro_f1", m.macro_f1}}; }

/// Applies dataset statistics for zscore encoding.
void apply_stats(ModelConfig& cfg, std::span<const RawSeries> data) {
  if (cfg.encoding != EncodingMode::zscore) return;
  const auto s = dataset_stats(data);
  if (s.std <= 0.0) throw DataError("zscore encoding: dataset std is zero");
  cfg.data_mean = s.mean;
  cfg.data_std = s.std;
}

template <typename Fn>
auto visit_model(const nt_model* m, Fn&& fn) {
  need(m, "model");
  return std::visit(std::forward<Fn>(fn), m->m);
}

}  // namespace

extern "C" {

const char* nt_last_error(void) { return g_error.c_str(); }
const char* nt_last_error_detail(void) { return g_detail.c_str(); }
const char* nt_version(void) { return "0.1.0"; }
void nt_string_free(char* s) { std::free(s); }

nt_status nt_set_threads(size_t n) {
  return guarded([&] {
    if (n == 0) throw UsageError("thread count must be >= 1");
    set_thread_count(n);
  });
}

nt_status nt_config_default(char** out) {
  return guarded([&] {
    need(out, "out");
    *out = dup(RunConfig{}.to_json());
  });
}

nt_status nt_config_resolve(const char* file_json, const char* overrides_json, char** resolved, char** hash) {
  return guarded([&] {
    need(resolved, "resolved_json");
    RunConfig c = config_of(file_json);
    if (overrides_json) {
      json base = json::parse(c.to_json());
      const json patch = json::parse(overrides_json);
      RunConfig::from_json(patch.dump());  // key and type check
      base.merge_patch(patch);
      c = RunConfig::from_json(base.dump());
    }
    *resolved = dup(c.to_json());
    if (hash) *hash = dup(c.hash());
  });
}

nt_status nt_dataset_load(const char* path, const char* split, size_t max_len, nt_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto splits = load_data_arg(path);
    const std::string name = split ? split : "train";
    auto it = splits.find(name);
    if (it == splits.end()) throw DataError(std::string(path) + ": no split named '" + name + "'");
    auto ds = std::make_unique<nt_dataset>();
    ds->series = filter_max_len(std::move(it->second), max_len);
    if (ds->series.empty()) throw DataError(std::string(path) + ": split '" + name + "' is empty after filtering");
    *out = ds.release();
  });
}

nt_status nt_dataset_from_values(const double* values, size_t n, size_t channels, size_t length, const int* labels,
                                 nt_dataset** out) {
  return guarded([&] {
    need(values, "values");
    need(out, "out");
    if (n == 0 || channels == 0 || length == 0) throw UsageError("dataset dimensions must be positive");
    auto ds = std::make_unique<nt_dataset>();
    const std::size_t stride = channels * length;
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<int> label;
      if (labels) label = labels[i];
      RawSeries s(channels, length, std::vector<double>(values + i * stride, values + (i + 1) * stride), label,
                  "row:" + std::to_string(i));
      s.validate();
      ds->series.push_back(std::move(s));
    }
    *out = ds.release();
  });
}

void nt_dataset_free(nt_dataset* ds) { delete ds; }

nt_status nt_dataset_size(const nt_dataset* ds, size_t* n, size_t* channels, size_t* max_length) {
  return guarded([&] {
    need(ds, "dataset");
    std::size_t longest = 0;
    for (const auto& s : ds->series) longest = std::max(longest, s.length);
    if (n) *n = ds->series.size();
    if (channels) *channels = ds->series.empty() ? 0 : ds->series[0].channels;
    if (max_length) *max_length = longest;
  });
}

nt_status nt_dataset_series(const nt_dataset* ds, size_t index, const double** values, size_t* channels,
                            size_t* length, int* label) {
  return guarded([&] {
    need(ds, "dataset");
    if (index >= ds->series.size()) throw UsageError("series index out of range");
    const auto& s = ds->series[index];
    if (values) *values = s.values.data();
    if (channels) *channels = s.channels;
    if (length) *length = s.length;
    if (label) *label = s.label ? *s.label : -1;
  });
}

nt_status nt_dataset_stats(const nt_dataset* ds, double* mean, double* std) {
  return guarded([&] {
    need(ds, "dataset");
    const auto s = dataset_stats(ds->series);
    if (mean) *mean = s.mean;
    if (std) *std = s.std;
  });
}

nt_status nt_synth_default_spec(char** out) {
  return guarded([&] {
    need(out, "out");
    *out = dup(SynthSpec{}.to_json());
  });
}

nt_status nt_synth_write(const char* spec_json, const char* out_dir) {
  return guarded([&] {
    need(out_dir, "out_dir");
    const SynthSpec spec = spec_json ? SynthSpec::from_json(spec_json) : SynthSpec{};
    write_synth(spec, out_dir);
  });
}

nt_status nt_model_create(const char* config_json, nt_model** out) {
  return guarded([&] {
    need(out, "out");
    const RunConfig c = config_of(config_json);
    auto m = std::make_unique<nt_model>();
    if (c.f64) {
      m->m = create_model<double>(c.model, c.seed);
    } else {
      m->m = create_model<float>(c.model, c.seed);
    }
    *out = m.release();
  });
}

nt_status nt_model_load(const char* path, int f64, nt_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    const Checkpoint ck = load_checkpoint(path);
    auto m = std::make_unique<nt_model>();
    if (f64) {
      m->m = model_from_checkpoint<double>(ck);
    } else {
      m->m = model_from_checkpoint<float>(ck);
    }
    *out = m.release();
  });
}

nt_status nt_model_save(const nt_model* model, const char* path, const char* metadata_json) {
  return guarded([&] {
    need(path, "path");
    const std::string meta = metadata_json ? metadata_json : "{}";
    visit_model(model, [&](const auto& m) { save_checkpoint(model_checkpoint(m, meta), path); });
  });
}

void nt_model_free(nt_model* model) { delete model; }

nt_status nt_model_info(const nt_model* model, char** out) {
  return guarded([&] {
    need(out, "out");
    json j = visit_model(model, [](const auto& m) {
      using M = std::decay_t<decltype(m)>;
      return json{{"config", json::parse(model_config_to_json(m.config))},
                  {"parameters", m.params.numel()},
                  {"precision", std::is_same_v<M, Model<double>> ? "f64" : "f32"}};
    });
    *out = dup(j.dump(2));
  });
}

nt_status nt_model_embed(const nt_model* model, const nt_dataset* ds, double* out, size_t cap, size_t* d) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const Tensor<double> reps = visit_model(model, [&](const auto& m) {
      const std::size_t len = input_length(ds->series, m.config.window_size, m.config.max_tokens * m.config.window_size);
      return representations(m, ds->series, len);
    });
    if (cap < reps.size()) throw UsageError("embed: output buffer too small");
    std::copy(reps.data().begin(), reps.data().end(), out);
    if (d) *d = reps.cols();
  });
}

nt_status nt_model_attention(const nt_model* model, const nt_dataset* ds, size_t index, char** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    if (index >= ds->series.size()) throw UsageError("attention: series index out of range");
    const AttentionMap a = visit_model(model, [&](const auto& m) {
      const std::size_t len = fit_length(ds->series[index].length, m.config.window_size,
                                         m.config.max_tokens * m.config.window_size);
      return cls_attention(m, resize_linear(ds->series[index], len));
    });
    json layers = json::array(), cls = json::array();
    for (std::size_t l = 0; l < a.layers; ++l) {
      json heads = json::array(), self = json::array();
      for (std::size_t h = 0; h < a.heads; ++h) {
        json row = json::array();
        for (std::size_t p = 0; p < a.patches; ++p) row.push_back(a.at(l, h, p));
        heads.push_back(std::move(row));
        self.push_back(a.cls_to_cls[l * a.heads + h]);
      }
      layers.push_back(std::move(heads));
      cls.push_back(std::move(self));
    }
    *out = dup(json{{"series", ds->series[index].id}, {"layers", layers}, {"cls_to_cls", cls}}.dump());
  });
}

nt_status nt_pretrain(const char* config_json, const nt_dataset* train, nt_model** out, char** loss_csv) {
  return guarded([&] {
    need(train, "dataset");
    need(out, "out");
    const RunConfig c = config_of(config_json);
    const auto series = split_multivariate(std::span<const RawSeries>(train->series));
    ModelConfig mc = c.model;
    apply_stats(mc, series);
    auto m = std::make_unique<nt_model>();
    std::string csv;
    if (c.f64) {
      auto r = pretrain<double>(series, mc, c.pretrain);
      csv = loss_log_csv(r.log);
      m->m = std::move(r.model);
    } else {
      auto r = pretrain<float>(series, mc, c.pretrain);
      csv = loss_log_csv(r.log);
      m->m = std::move(r.model);
    }
    if (loss_csv) *loss_csv = dup(csv);
    *out = m.release();
  });
}

nt_status nt_finetune(const char* config_json, const nt_model* init, const nt_dataset* train, const nt_dataset* val,
                      const nt_dataset* test, nt_model** out, char** report_json) {
  return guarded([&] {
    need(train, "train");
    need(val, "val");
    need(out, "out");
    const RunConfig c = config_of(config_json);
    auto run = [&](auto tag) {
      using T = decltype(tag);
      std::vector<Model<T>> models;
      json report;
      for (std::size_t k = 0; k < c.ensemble; ++k) {
        FinetuneConfig fc = c.finetune;
        fc.seed = k == 0 ? c.seed : mix_seed(c.seed, 0x656e73, k);
        Model<T> start;
        if (init) {
          start = std::visit(
              [](const auto& m) {
                return Model<T>{m.config, m.params.template cast<T>()};
              },
              init->m);
        } else {
          ModelConfig mc = c.model;
          apply_stats(mc, train->series);
          start = create_model<T>(mc, fc.seed);
        }
        auto r = finetune(std::move(start), train->series, val->series, fc);
        if (k == 0) {
          report["val"] = metrics_json(r.val);
          report["best_epoch"] = r.best_epoch;
          report["train_loss"] = r.train_loss;
          report["length"] = r.length;
        }
        models.push_back(std::move(r.model));
      }
      if (test) {
        const std::size_t len = input_length(train->series, models[0].config.window_size, c.finetune.max_len);
        report["test"] = metrics_json(models.size() == 1
                                          ? evaluate(models[0], test->series, len)
                                          : evaluate_ensemble(std::span<const Model<T>>(models), test->series, len));
      }
      auto m = std::make_unique<nt_model>();
      m->m = std::move(models[0]);
      *out = m.release();
      if (report_json) *report_json = dup(report.dump());
    };
    if (c.f64) {
      run(double{});
    } else {
      run(float{});
    }
  });
}

nt_status nt_evaluate(const nt_model* model, const nt_dataset* ds, char** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const Metrics m = visit_model(model, [&](const auto& mm) {
      const std::size_t len = input_length(ds->series, mm.config.window_size, mm.config.max_tokens * mm.config.window_size);
      return evaluate(mm, ds->series, std::min<std::size_t>(len, 512));
    });
    *out = dup(metrics_json(m).dump());
  });
}

nt_status nt_linear_probe(const char* config_json, const nt_model* model, const nt_dataset* train,
                          const nt_dataset* test, char** out) {
  return guarded([&] {
    need(train, "train");
    need(test, "test");
    need(out, "out");
    const RunConfig c = config_of(config_json);
    const Metrics m = visit_model(
        model, [&](const auto& mm) { return linear_probe(mm, train->series, test->series, c.probe, c.finetune.max_len); });
    *out = dup(metrics_json(m).dump());
  });
}

nt_status nt_fewshot(const char* config_json, const nt_model* model, const nt_dataset* pool,
                     const nt_dataset* query, char** out) {
  return guarded([&] {
    need(pool, "pool");
    need(query, "query");
    need(out, "out");
    const RunConfig c = config_of(config_json);
    EpisodeSpec spec = c.fewshot;
    spec.max_len = c.finetune.max_len;
    const FewShotResult r = visit_model(model, [&](const auto& mm) { return few_shot_eval(mm, pool->series, query->series, spec); });
    json j = metrics_json(r.mean);
    j["top1_std"] = r.std.top1;
    j["macro_f1_std"] = r.std.macro_f1;
    j["episodes"] = r.episodes.size();
    *out = dup(j.dump());
  });
}

nt_status nt_cluster(const char* config_json, const nt_model* model, const nt_dataset* ds, char** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const RunConfig c = config_of(config_json);
    const auto labels = labels_of(ds->series);
    const Tensor<double> reps = visit_model(model, [&](const auto& mm) {
      return representations(mm, ds->series, input_length(ds->series, mm.config.window_size, c.finetune.max_len));
    });
    const ClusterMetrics m = cluster_eval(reps, labels, c.cluster_k, c.seed);
    *out = dup(json{{"silhouette", m.silhouette}, {"ari", m.ari}, {"nmi", m.nmi}}.dump());
  });
}

nt_status nt_anomaly(const char* config_json, const nt_model* model, const nt_dataset* normal, const nt_dataset* test,
                     char** out) {
  return guarded([&] {
    need(normal, "normal");
    need(test, "test");
    need(out, "out");
    const RunConfig c = config_of(config_json);
    std::vector<int> labels;
    for (int l : labels_of(test->series)) labels.push_back(l == 0 ? 0 : 1);
    Tensor<double> rn, rt;
    visit_model(model, [&](const auto& mm) {
      const std::size_t len = input_length(normal->series, mm.config.window_size, c.finetune.max_len);
      rn = representations(mm, normal->series, len);
      rt = representations(mm, test->series, len);
    });
    const AnomalyMetrics m = anomaly_eval(rn, rt, labels, c.anomaly_percentile);
    *out = dup(json{{"precision", m.precision},
                    {"recall", m.recall},
                    {"f1", m.f1},
                    {"auroc", m.auroc},
                    {"threshold", m.threshold}}
                   .dump());
  });
}

nt_status nt_metrics_append(const char* csv_path, const char* command, const char* dataset, const char* split,
                            const char* config_json, const char* metrics, char** table) {
  return guarded([&] {
    need(metrics, "metrics_json");
    const RunConfig c = config_of(config_json);
    const json j = json::parse(metrics);
    MetricsRecord r;
    r.command = command ? command : "";
    r.dataset = dataset ? dataset : "";
    r.split = split ? split : "";
    r.config_hash = c.hash();
    r.seed = c.seed;
    r.encoding = to_string(c.model.encoding);
    auto opt = [&](const char* key) -> std::optional<double> {
      if (!j.contains(key)) return std::nullopt;
      return j.at(key).get<double>();
    };
    r.top1 = opt("top1");
    r.macro_f1 = opt("macro_f1");
    r.top1_std = opt("top1_std");
    r.macro_f1_std = opt("macro_f1_std");
    r.silhouette = opt("silhouette");
    r.ari = opt("ari");
    r.nmi = opt("nmi");
    r.precision = opt("precision");
    r.recall = opt("recall");
    r.f1 = opt("f1");
    r.auroc = opt("auroc");
    if (csv_path && *csv_path) append_metrics_csv(csv_path, r);
    if (table) *table = dup(metrics_table(r));
  });
}

}  // extern "C"
