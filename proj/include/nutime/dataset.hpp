// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nutime/tokenizer.hpp"

namespace nutime {

/// Parses a label-first, tab-separated file. Labels are remapped to 0..K-1 in
/// ascending numeric order of the original values. Rows of a different length
/// than the first, unparsable fields, non-finite values and empty files are
/// rejected with the offending line number. Ids are "<file>:<line>".
std::vector<RawSeries> load_ucr_tsv(const std::filesystem::path& path);

/// Several splits parsed with one shared label map.
std::vector<std::vector<RawSeries>> load_ucr_splits(const std::vector<std::filesystem::path>& paths);

/// Per-channel TSVs (one file per channel, rows aligned) joined into C x T
/// series. Labels must agree row by row.
std::vector<RawSeries> load_multichannel(const std::vector<std::filesystem::path>& channel_files);

void write_ucr_tsv(const std::filesystem::path& path, std::span<const RawSeries> data);

/// C univariate series with ids "<id>#c<k>".
std::vector<RawSeries> split_multivariate(const RawSeries& series);
std::vector<RawSeries> split_multivariate(std::span<const RawSeries> data);

/// Drops series longer than `max_len` (0 keeps everything).
std::vector<RawSeries> filter_max_len(std::vector<RawSeries> data, std::size_t max_len);

struct DatasetStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Mean and population std over every value of every series.
DatasetStats dataset_stats(std::span<const RawSeries> data);

struct DatasetManifest {
  std::string name;
  std::size_t n_channels = 1;
  std::size_t n_classes = 0;
  /// split -> files; multivariate splits list one file per channel.
  std::map<std::string, std::vector<std::string>> splits;
  DatasetStats stats;
  std::filesystem::path root;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text, const std::filesystem::path& root);
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// All splits of a manifest, loaded with one shared label map.
std::map<std::string, std::vector<RawSeries>> load_dataset(const DatasetManifest& manifest);

/// Resolves a data argument: a manifest.json, a directory holding one, or a
/// single TSV (or comma-separated per-channel TSVs) treated as split "train".
std::map<std::string, std::vector<RawSeries>> load_data_arg(const std::string& arg);

enum class SynthMode { scale, shape };

struct SynthSpec {
  std::size_t n_classes = 2;
  std::size_t samples_per_class = 128;
  std::size_t val_per_class = 32;
  std::size_t test_per_class = 64;
  std::size_t length = 512;
  /// Per-class log10 scale of window means (scale mode); the first entry is
  /// shared by all classes in shape mode.
  std::vector<double> exponents{-2.0, 2.0};
  /// Per-class prototype families (shape mode); the first entry is shared in
  /// scale mode. One of sine, square, sawtooth.
  std::vector<std::string> families{"sine", "square"};
  /// Shape amplitude relative to the window-mean scale.
  double amplitude = 0.25;
  double noise = 0.1;
  SynthMode mode = SynthMode::scale;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SynthSpec from_json(const std::string& text);
};

struct SynthData {
  std::vector<RawSeries> train, val, test;
};

/// Deterministic in spec.seed. Every 16-point window of a class-c series has
/// mean exactly 10^s_c * u with u ~ U[0.5, 1.5]; the within-window part is a
/// zero-mean prototype segment plus noise, scaled by the same 10^s_c.
SynthData generate_synth(const SynthSpec& spec);

/// Writes train/val/test TSVs and manifest.json into `dir`.
DatasetManifest write_synth(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace nutime
