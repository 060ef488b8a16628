// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "nutime/byol.hpp"
#include "nutime/eval.hpp"
#include "nutime/model.hpp"

namespace nutime {

std::string model_config_to_json(const ModelConfig& cfg);
/// Starts from defaults; unknown keys and wrong types raise UsageError.
ModelConfig model_config_from_json(const std::string& text);

/// Every tunable of a run. The single `seed` drives every stage.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool f64 = false;
  /// Drop series longer than this at load time (0 keeps all).
  std::size_t max_len_filter = 0;
  ModelConfig model;
  ByolConfig pretrain;
  FinetuneConfig finetune;
  /// Number of independently seeded fine-tunes whose logits are averaged.
  std::size_t ensemble = 1;
  ProbeConfig probe;
  EpisodeSpec fewshot;
  std::size_t cluster_k = 2;
  double anomaly_percentile = 95.0;

  /// Copies `seed` into every stage config.
  void propagate_seed();
  std::string to_json() const;
  /// Unknown keys (at any depth) and wrong types raise UsageError.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// 16-hex-digit FNV-1a 64 of the canonical JSON.
  std::string hash() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// One evaluation record. Unused fields are written empty.
struct MetricsRecord {
  std::string command;
  std::string dataset;
  std::string split;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string encoding;
  std::optional<double> top1, macro_f1, top1_std, macro_f1_std;
  std::optional<double> silhouette, ari, nmi;
  std::optional<double> precision, recall, f1, auroc;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
/// Appends one row; writes the header first when the file is new or empty and
/// refuses files whose header differs.
void append_metrics_csv(const std::filesystem::path& path, const MetricsRecord& r);
/// Two-column "metric  value" table.
std::string metrics_table(const MetricsRecord& r);

}  // namespace nutime
