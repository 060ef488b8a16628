// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "nutime/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nutime {

namespace {

struct ParsedRow {
  double label;
  std::vector<double> values;
  std::size_t line;
};

double parse_real(std::string_view field, const std::string& where) {
  // from_chars rejects a leading '+'; accept it like strtod does.
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError(where + ": cannot parse '" + std::string(field) + "' as a real number");
  }
  if (!std::isfinite(v)) throw DataError(where + ": non-finite value '" + std::string(field) + "'");
  return v;
}

std::vector<ParsedRow> parse_tsv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ParsedRow> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    std::vector<double> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      const std::string_view f(line.data() + start, (tab == std::string::npos ? line.size() : tab) - start);
      fields.push_back(parse_real(f, where));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2) throw DataError(where + ": expected a label followed by at least one value");
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DataError(where + ": row has " + std::to_string(fields.size() - 1) + " values, expected " +
                      std::to_string(width - 1) + " (ragged rows are not supported)");
    }
    rows.push_back({fields[0], std::vector<double>(fields.begin() + 1, fields.end()), lineno});
  }
  if (rows.empty()) throw DataError(path.string() + ": empty file");
  return rows;
}

std::vector<std::vector<RawSeries>> remap(const std::vector<fs::path>& paths,
                                          const std::vector<std::vector<ParsedRow>>& parsed) {
  std::set<double> labels;
  for (const auto& rows : parsed) {
    for (const auto& r : rows) labels.insert(r.label);
  }
  std::map<double, int> ids;
  int next = 0;
  for (double l : labels) ids[l] = next++;
  std::vector<std::vector<RawSeries>> out(parsed.size());
  for (std::size_t f = 0; f < parsed.size(); ++f) {
    for (const auto& r : parsed[f]) {
      out[f].push_back(RawSeries::univariate(r.values, ids[r.label],
                                             paths[f].filename().string() + ":" + std::to_string(r.line)));
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<RawSeries>> load_ucr_splits(const std::vector<fs::path>& paths) {
  std::vector<std::vector<ParsedRow>> parsed;
  for (const auto& p : paths) parsed.push_back(parse_tsv(p));
  return remap(paths, parsed);
}

std::vector<RawSeries> load_ucr_tsv(const fs::path& path) { return load_ucr_splits({path}).front(); }

namespace {

std::vector<std::vector<RawSeries>> load_multichannel_splits(const std::vector<std::vector<fs::path>>& splits) {
  // Flatten to share one label map, then regroup.
  std::vector<fs::path> flat;
  for (const auto& s : splits) flat.insert(flat.end(), s.begin(), s.end());
  auto loaded = load_ucr_splits(flat);
  std::vector<std::vector<RawSeries>> out;
  std::size_t pos = 0;
  for (const auto& s : splits) {
    if (s.empty()) throw UsageError("split without files");
    const auto& first = loaded[pos];
    std::vector<RawSeries> joined;
    for (std::size_t i = 0; i < first.size(); ++i) {
      const std::size_t c = s.size(), t = first[i].length;
      std::vector<double> v;
      v.reserve(c * t);
      for (std::size_t k = 0; k < c; ++k) {
        const auto& ch = loaded[pos + k];
        if (ch.size() != first.size()) throw DataError(s[k].string() + ": row count differs from " + s[0].string());
        if (ch[i].length != t) throw DataError(ch[i].id + ": channel length differs from " + first[i].id);
        if (ch[i].label != first[i].label) throw DataError(ch[i].id + ": label differs from " + first[i].id);
        v.insert(v.end(), ch[i].values.begin(), ch[i].values.end());
      }
      joined.emplace_back(c, t, std::move(v), first[i].label, first[i].id);
    }
    out.push_back(std::move(joined));
    pos += s.size();
  }
  return out;
}

std::string fmt_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<RawSeries> load_multichannel(const std::vector<fs::path>& files) {
  return load_multichannel_splits({files}).front();
}

void write_ucr_tsv(const fs::path& path, std::span<const RawSeries> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : data) {
    if (s.channels != 1) throw UsageError("write_ucr_tsv: series must be univariate");
    out << (s.label ? *s.label : 0);
    for (double v : s.values) out << '\t' << fmt_real(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<RawSeries> split_multivariate(const RawSeries& s) {
  std::vector<RawSeries> out;
  for (std::size_t c = 0; c < s.channels; ++c) {
    std::vector<double> v(s.channel(c), s.channel(c) + s.length);
    out.push_back(RawSeries::univariate(std::move(v), s.label, s.channels == 1 ? s.id : s.id + "#c" + std::to_string(c)));
  }
  return out;
}

std::vector<RawSeries> split_multivariate(std::span<const RawSeries> data) {
  std::vector<RawSeries> out;
  for (const auto& s : data) {
    auto parts = split_multivariate(s);
    out.insert(out.end(), std::make_move_iterator(parts.begin()), std::make_move_iterator(parts.end()));
  }
  return out;
}

std::vector<RawSeries> filter_max_len(std::vector<RawSeries> data, std::size_t max_len) {
  if (max_len == 0) return data;
  std::erase_if(data, [&](const RawSeries& s) { return s.length > max_len; });
  return data;
}

DatasetStats dataset_stats(std::span<const RawSeries> data) {
  double sum = 0.0, n = 0.0;
  for (const auto& s : data) {
    for (double v : s.values) sum += v;
    n += static_cast<double>(s.values.size());
  }
  if (n == 0) throw DataError("dataset_stats: no values");
  const double mean = sum / n;
  double sq = 0.0;
  for (const auto& s : data) {
    for (double v : s.values) sq += (v - mean) * (v - mean);
  }
  return {mean, std::sqrt(sq / n)};
}

std::string DatasetManifest::to_json() const {
  json j;
  j["name"] = name;
  j["n_channels"] = n_channels;
  j["n_classes"] = n_classes;
  j["splits"] = splits;
  j["stats"] = {{"mean", stats.mean}, {"std", stats.std}};
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    const json j = json::parse(text);
    for (const auto& [key, _] : j.items()) {
      if (key != "name" && key != "n_channels" && key != "n_classes" && key != "splits" && key != "stats") {
        throw DataError("manifest: unknown key '" + key + "'");
      }
    }
    m.name = j.value("name", std::string{});
    m.n_channels = j.value("n_channels", std::size_t{1});
    m.n_classes = j.value("n_classes", std::size_t{0});
    m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("stats")) {
      m.stats.mean = j["stats"].at("mean").get<double>();
      m.stats.std = j["stats"].at("std").get<double>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  if (m.n_channels == 0) throw DataError("manifest: n_channels must be >= 1");
  for (const auto& [split, files] : m.splits) {
    if (files.size() != m.n_channels) {
      throw DataError("manifest: split '" + split + "' lists " + std::to_string(files.size()) + " files for " +
                      std::to_string(m.n_channels) + " channels");
    }
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return DatasetManifest::from_json(ss.str(), path.parent_path());
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << m.to_json();
  if (!out) throw IoError("write failed: " + path.string());
}

std::map<std::string, std::vector<RawSeries>> load_dataset(const DatasetManifest& m) {
  std::vector<std::string> names;
  std::vector<std::vector<fs::path>> files;
  for (const auto& [split, list] : m.splits) {
    names.push_back(split);
    std::vector<fs::path> paths;
    for (const auto& f : list) {
      const fs::path p(f);
      const fs::path full = p.is_absolute() ? p : m.root / p;
      if (!fs::exists(full)) throw DataError("manifest references a missing file: " + full.string());
      paths.push_back(full);
    }
    files.push_back(std::move(paths));
  }
  auto loaded = load_multichannel_splits(files);
  std::map<std::string, std::vector<RawSeries>> out;
  for (std::size_t i = 0; i < names.size(); ++i) out[names[i]] = std::move(loaded[i]);
  return out;
}

std::map<std::string, std::vector<RawSeries>> load_data_arg(const std::string& arg) {
  if (arg.empty()) throw UsageError("empty data path");
  const fs::path p(arg);
  if (fs::is_directory(p)) {
    if (!fs::exists(p / "manifest.json")) throw DataError(arg + ": directory has no manifest.json");
    return load_dataset(load_manifest(p / "manifest.json"));
  }
  if (p.extension() == ".json") return load_dataset(load_manifest(p));
  std::vector<fs::path> parts;
  std::stringstream ss(arg);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) parts.emplace_back(item);
  }
  return {{"train", load_multichannel(parts)}};
}

void SynthSpec::validate() const {
  if (n_classes < 2) throw UsageError("synth: n_classes must be >= 2");
  if (samples_per_class == 0) throw UsageError("synth: samples_per_class must be >= 1");
  if (length < 16 || length % 16 != 0) throw UsageError("synth: length must be a positive multiple of 16");
  if (exponents.empty() || families.empty()) throw UsageError("synth: exponents and families must be non-empty");
  for (double e : exponents) {
    if (!(e >= -4.0 && e <= 4.0)) throw UsageError("synth: exponents must lie in [-4, 4]");
  }
  for (const auto& f : families) {
    if (f != "sine" && f != "square" && f != "sawtooth") throw UsageError("synth: unknown family '" + f + "'");
  }
  if (mode == SynthMode::scale && exponents.size() < n_classes) {
    throw UsageError("synth: scale mode needs one exponent per class");
  }
  if (mode == SynthMode::shape && families.size() < n_classes) {
    throw UsageError("synth: shape mode needs one family per class");
  }
  if (!(amplitude >= 0.0) || !(noise >= 0.0)) throw UsageError("synth: amplitude and noise must be >= 0");
}

std::string SynthSpec::to_json() const {
  json j;
  j["n_classes"] = n_classes;
  j["samples_per_class"] = samples_per_class;
  j["val_per_class"] = val_per_class;
  j["test_per_class"] = test_per_class;
  j["length"] = length;
  j["exponents"] = exponents;
  j["families"] = families;
  j["amplitude"] = amplitude;
  j["noise"] = noise;
  j["mode"] = mode == SynthMode::scale ? "scale" : "shape";
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

SynthSpec SynthSpec::from_json(const std::string& text) {
  SynthSpec s;
  try {
    const json j = json::parse(text);
    const json defaults = json::parse(s.to_json());
    for (const auto& [key, _] : j.items()) {
      if (!defaults.contains(key)) throw UsageError("synth spec: unknown key '" + key + "'");
    }
    s.n_classes = j.value("n_classes", s.n_classes);
    s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
    s.val_per_class = j.value("val_per_class", s.val_per_class);
    s.test_per_class = j.value("test_per_class", s.test_per_class);
    s.length = j.value("length", s.length);
    s.exponents = j.value("exponents", s.exponents);
    s.families = j.value("families", s.families);
    s.amplitude = j.value("amplitude", s.amplitude);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    const std::string mode = j.value("mode", std::string("scale"));
    if (mode == "scale") {
      s.mode = SynthMode::scale;
    } else if (mode == "shape") {
      s.mode = SynthMode::shape;
    } else {
      throw UsageError("synth spec: mode must be 'scale' or 'shape'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

double prototype(const std::string& family, double phase) {
  const double f = phase - std::floor(phase);  // [0, 1)
  if (family == "sine") return std::sin(2.0 * std::numbers::pi * f);
  if (family == "square") return f < 0.5 ? 1.0 : -1.0;
  return 2.0 * f - 1.0;  // sawtooth
}

RawSeries synth_series(const SynthSpec& spec, int cls, std::mt19937_64& rng, const std::string& id) {
  constexpr std::size_t w = 16;
  const bool scale_mode = spec.mode == SynthMode::scale;
  const double expo = scale_mode ? spec.exponents[cls] : spec.exponents[0];
  const std::string& family = scale_mode ? spec.families[0] : spec.families[cls];
  const double mag = std::pow(10.0, expo);
  std::uniform_real_distribution<double> unit_mean(0.5, 1.5), period_d(32.0, 128.0), phase_d(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double period = period_d(rng), phase0 = phase_d(rng);
  std::vector<double> v(spec.length);
  std::vector<double> local(w);
  for (std::size_t n = 0; n < spec.length / w; ++n) {
    const double m = unit_mean(rng);
    double avg = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      const double t = static_cast<double>(n * w + i);
      local[i] = prototype(family, phase0 + t / period) + spec.noise * gauss(rng);
      avg += local[i];
    }
    avg /= static_cast<double>(w);
    for (std::size_t i = 0; i < w; ++i) v[n * w + i] = mag * (m + spec.amplitude * (local[i] - avg));
  }
  return RawSeries::univariate(std::move(v), cls, id);
}

}  // namespace

SynthData generate_synth(const SynthSpec& spec) {
  spec.validate();
  SynthData d;
  std::mt19937_64 rng(spec.seed);
  auto fill = [&](std::vector<RawSeries>& out, std::size_t per_class, const char* split) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < spec.n_classes; ++c) {
        out.push_back(synth_series(spec, static_cast<int>(c), rng,
                                   std::string(split) + ":" + std::to_string(i * spec.n_classes + c)));
      }
    }
  };
  fill(d.train, spec.samples_per_class, "train");
  fill(d.val, spec.val_per_class, "val");
  fill(d.test, spec.test_per_class, "test");
  return d;
}

DatasetManifest write_synth(const SynthSpec& spec, const fs::path& dir) {
  const auto data = generate_synth(spec);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.name = std::string("synth-") + (spec.mode == SynthMode::scale ? "scale" : "shape");
  m.n_channels = 1;
  m.n_classes = spec.n_classes;
  m.root = dir;
  m.stats = dataset_stats(data.train);
  const std::pair<const char*, const std::vector<RawSeries>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [name, series] : splits) {
    if (series->empty()) continue;
    const std::string file = std::string(name) + ".tsv";
    write_ucr_tsv(dir / file, *series);
    m.splits[name] = {file};
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace nutime
