// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/config.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "nutime/errors.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace nutime {

namespace {

json model_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"mlp_dim", c.mlp_dim},
              {"window_size", c.window_size},
              {"shape_embed_dim", c.shape_embed_dim},
              {"mean_std_embed_dim", c.mean_std_embed_dim},
              {"max_tokens", c.max_tokens},
              {"n_channels", c.n_channels},
              {"n_classes", c.n_classes},
              {"encoding", to_string(c.encoding)},
              {"data_mean", c.data_mean},
              {"data_std", c.data_std},
              {"dropout", c.dropout},
              {"ln_eps", c.ln_eps},
              {"std_floor", c.std_floor},
              {"nme",
               {{"scales", c.nme.scales},
                {"epsilon", c.nme.epsilon},
                {"weight_clamp", c.nme.weight_clamp},
                {"weighted", c.nme.weighted},
                {"init_std_w", c.nme.init_std_w},
                {"init_std_b", c.nme.init_std_b}}}};
}

ModelConfig model_from(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
  c.window_size = j.at("window_size").get<std::size_t>();
  c.shape_embed_dim = j.at("shape_embed_dim").get<std::size_t>();
  c.mean_std_embed_dim = j.at("mean_std_embed_dim").get<std::size_t>();
  c.max_tokens = j.at("max_tokens").get<std::size_t>();
  c.n_channels = j.at("n_channels").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.encoding = parse_encoding(j.at("encoding").get<std::string>());
  c.data_mean = j.at("data_mean").get<double>();
  c.data_std = j.at("data_std").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.std_floor = j.at("std_floor").get<double>();
  const json& n = j.at("nme");
  c.nme.scales = n.at("scales").get<std::vector<double>>();
  c.nme.epsilon = n.at("epsilon").get<double>();
  c.nme.weight_clamp = n.at("weight_clamp").get<double>();
  c.nme.weighted = n.at("weighted").get<bool>();
  c.nme.init_std_w = n.at("init_std_w").get<double>();
  c.nme.init_std_b = n.at("init_std_b").get<double>();
  c.nme.embed_dim = c.mean_std_embed_dim;
  return c;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // An integer slot must not receive a fraction or a negative number.
    if (a.is_number_unsigned() || a.is_number_integer()) return b.is_number_unsigned() || b.is_number_integer();
    return true;
  }
  return a.type() == b.type();
}

/// Rejects keys absent from `defaults` and values of the wrong JSON kind.
void check_keys(const json& defaults, const json& given, const std::string& path) {
  if (!given.is_object()) throw UsageError("config: " + (path.empty() ? "top level" : path) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw UsageError("config: unknown key '" + where + "'");
    const json& d = defaults.at(key);
    if (d.is_object()) {
      check_keys(d, value, where);
    } else if (!same_kind(d, value)) {
      throw UsageError("config: '" + where + "' has the wrong type (expected " + std::string(d.type_name()) + ")");
    } else if (d.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
      throw UsageError("config: '" + where + "' must be non-negative");
    }
  }
}

template <typename Fn>
auto wrap_json(Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  return wrap_json([&] {
    json given = json::parse(text);
    json base = model_json(ModelConfig{});
    check_keys(base, given, "model");
    base.merge_patch(given);
    return model_from(base);
  });
}

void RunConfig::propagate_seed() {
  pretrain.seed = seed;
  finetune.seed = seed;
  probe.seed = seed;
  fewshot.seed = seed;
}

namespace {

json run_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["f64"] = c.f64;
  j["max_len_filter"] = c.max_len_filter;
  j["model"] = model_json(c.model);
  const auto& p = c.pretrain;
  j["pretrain"] = {{"proj_hidden", p.proj_hidden}, {"proj_dim", p.proj_dim},     {"pred_hidden", p.pred_hidden},
                   {"tau_base", p.tau_base},       {"epochs", p.epochs},         {"warmup_epochs", p.warmup_epochs},
                   {"base_lr", p.base_lr},         {"batch_size", p.batch_size}, {"weight_decay", p.weight_decay},
                   {"min_crop", p.min_crop},       {"crop_len", p.crop_len}};
  const auto& f = c.finetune;
  j["finetune"] = {{"epochs", f.epochs},
                   {"lr", f.lr},
                   {"batch_size", f.batch_size},
                   {"warmup_fraction", f.warmup_fraction},
                   {"weight_decay", f.weight_decay},
                   {"max_len", f.max_len},
                   {"ensemble", c.ensemble}};
  j["probe"] = {{"steps", c.probe.steps}, {"lr", c.probe.lr}};
  const auto& e = c.fewshot;
  j["fewshot"] = {{"shots", e.n_shots}, {"episodes", e.n_episodes}, {"steps", e.steps}, {"lr", e.lr}};
  j["cluster"] = {{"k", c.cluster_k}};
  j["anomaly"] = {{"percentile", c.anomaly_percentile}};
  return j;
}

}  // namespace

std::string RunConfig::to_json() const { return run_json(*this).dump(2) + "\n"; }

RunConfig RunConfig::from_json(const std::string& text) {
  return wrap_json([&] {
    const json given = json::parse(text);
    json j = run_json(RunConfig{});
    check_keys(j, given, "");
    j.merge_patch(given);
    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<std::size_t>();
    c.f64 = j.at("f64").get<bool>();
    c.max_len_filter = j.at("max_len_filter").get<std::size_t>();
    c.model = model_from(j.at("model"));
    const json& p = j.at("pretrain");
    c.pretrain.proj_hidden = p.at("proj_hidden").get<std::size_t>();
    c.pretrain.proj_dim = p.at("proj_dim").get<std::size_t>();
    c.pretrain.pred_hidden = p.at("pred_hidden").get<std::size_t>();
    c.pretrain.tau_base = p.at("tau_base").get<double>();
    c.pretrain.epochs = p.at("epochs").get<std::size_t>();
    c.pretrain.warmup_epochs = p.at("warmup_epochs").get<double>();
    c.pretrain.base_lr = p.at("base_lr").get<double>();
    c.pretrain.batch_size = p.at("batch_size").get<std::size_t>();
    c.pretrain.weight_decay = p.at("weight_decay").get<double>();
    c.pretrain.min_crop = p.at("min_crop").get<double>();
    c.pretrain.crop_len = p.at("crop_len").get<std::size_t>();
    const json& f = j.at("finetune");
    c.finetune.epochs = f.at("epochs").get<std::size_t>();
    c.finetune.lr = f.at("lr").get<double>();
    c.finetune.batch_size = f.at("batch_size").get<std::size_t>();
    c.finetune.warmup_fraction = f.at("warmup_fraction").get<double>();
    c.finetune.weight_decay = f.at("weight_decay").get<double>();
    c.finetune.max_len = f.at("max_len").get<std::size_t>();
    c.ensemble = f.at("ensemble").get<std::size_t>();
    c.probe.steps = j.at("probe").at("steps").get<std::size_t>();
    c.probe.lr = j.at("probe").at("lr").get<double>();
    const json& e = j.at("fewshot");
    c.fewshot.n_shots = e.at("shots").get<std::size_t>();
    c.fewshot.n_episodes = e.at("episodes").get<std::size_t>();
    c.fewshot.steps = e.at("steps").get<std::size_t>();
    c.fewshot.lr = e.at("lr").get<double>();
    c.cluster_k = j.at("cluster").at("k").get<std::size_t>();
    c.anomaly_percentile = j.at("anomaly").at("percentile").get<double>();
    c.propagate_seed();
    c.model.validate();
    c.pretrain.validate();
    c.finetune.validate();
    c.fewshot.validate();
    if (c.ensemble == 0) throw UsageError("config: finetune.ensemble must be >= 1");
    if (c.threads == 0) throw UsageError("config: threads must be >= 1");
    return c;
  });
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(run_json(*this).dump())));
  return buf;
}

namespace {

constexpr const char* kColumns[] = {"command", "dataset",  "split",  "encoding", "seed",      "config_hash",
                                    "top1",    "macro_f1", "top1_std", "macro_f1_std", "silhouette", "ari",
                                    "nmi",     "precision", "recall", "f1",       "auroc"};

std::string num(const std::optional<double>& v) {
  if (!v) return {};
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string metrics_csv_header() {
  std::string h;
  for (const char* c : kColumns) h += (h.empty() ? "" : ",") + std::string(c);
  return h;
}

std::string metrics_csv_row(const MetricsRecord& r) {
  const std::string fields[] = {csv_field(r.command), csv_field(r.dataset), csv_field(r.split),
                                csv_field(r.encoding), std::to_string(r.seed), r.config_hash,
                                num(r.top1),           num(r.macro_f1),       num(r.top1_std),
                                num(r.macro_f1_std),   num(r.silhouette),     num(r.ari),
                                num(r.nmi),            num(r.precision),      num(r.recall),
                                num(r.f1),             num(r.auroc)};
  std::string row;
  for (std::size_t i = 0; i < std::size(fields); ++i) row += (i ? "," : "") + fields[i];
  return row;
}

void append_metrics_csv(const fs::path& path, const MetricsRecord& r) {
  bool need_header = true;
  if (fs::exists(path) && fs::file_size(path) > 0) {
    std::ifstream in(path, std::ios::binary);
    std::string first;
    std::getline(in, first);
    if (first != metrics_csv_header()) throw DataError(path.string() + ": existing file has a different header");
    need_header = false;
  }
  std::string chunk = need_header ? metrics_csv_header() + "\n" : std::string{};
  chunk += metrics_csv_row(r) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open " + path.string() + " for appending");
  out.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::string metrics_table(const MetricsRecord& r) {
  std::ostringstream os;
  auto row = [&](const char* k, const std::string& v) {
    if (!v.empty()) os << std::left << std::setw(14) << k << v << '\n';
  };
  row("command", r.command);
  row("dataset", r.dataset);
  row("split", r.split);
  row("encoding", r.encoding);
  row("seed", std::to_string(r.seed));
  row("config_hash", r.config_hash);
  row("top1", num(r.top1));
  row("macro_f1", num(r.macro_f1));
  row("top1_std", num(r.top1_std));
  row("macro_f1_std", num(r.macro_f1_std));
  row("silhouette", num(r.silhouette));
  row("ari", num(r.ari));
  row("nmi", num(r.nmi));
  row("precision", num(r.precision));
  row("recall", num(r.recall));
  row("f1", num(r.f1));
  row("auroc", num(r.auroc));
  return os.str();
}

}  // namespace nutime
