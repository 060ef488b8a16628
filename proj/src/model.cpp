// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/model.hpp"

#include <cmath>
#include <random>

#include "nutime/errors.hpp"

namespace nutime {

std::string to_string(EncodingMode mode) {
  switch (mode) {
    case EncodingMode::nme: return "nme";
    case EncodingMode::zscore: return "zscore";
    case EncodingMode::instance_norm: return "instance_norm";
    case EncodingMode::identity: return "identity";
  }
  return "nme";
}

EncodingMode parse_encoding(const std::string& name) {
  if (name == "nme") return EncodingMode::nme;
  if (name == "zscore") return EncodingMode::zscore;
  if (name == "instance_norm") return EncodingMode::instance_norm;
  if (name == "identity") return EncodingMode::identity;
  throw UsageError("unknown encoding mode: " + name);
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) throw UsageError("model: d_model must be divisible by n_heads");
  if (d_model % 2 != 0) throw UsageError("model: d_model must be even for sinusoidal positions");
  if (n_layers == 0 || mlp_dim == 0) throw UsageError("model: n_layers and mlp_dim must be positive");
  if (window_size < 2) throw UsageError("model: window_size must be >= 2");
  if (shape_embed_dim < 2 || mean_std_embed_dim < 2) throw UsageError("model: embedding widths must be >= 2");
  if (nme.embed_dim != mean_std_embed_dim) throw UsageError("model: nme.embed_dim must equal mean_std_embed_dim");
  nme.validate();
  if (max_tokens == 0) throw UsageError("model: max_tokens must be positive");
  if (n_channels == 0) throw UsageError("model: n_channels must be >= 1");
  if (n_classes == 1) throw UsageError("model: a classification head needs >= 2 classes");
  if (encoding == EncodingMode::zscore && !(data_std > 0.0)) throw UsageError("model: zscore needs a positive dataset std");
  if (dropout < 0.0 || dropout >= 1.0) throw UsageError("model: dropout must be in [0, 1)");
  if (!(ln_eps > 0.0)) throw UsageError("model: ln_eps must be positive");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
  std::size_t n = 0;
  if (c.encoding == EncodingMode::nme) {
    n += lin(c.window_size, c.shape_embed_dim) + 2 * c.shape_embed_dim;
    n += 2 * c.nme.scales.size() * 4 * c.mean_std_embed_dim;
    n += lin(c.concat_width(), d);
  } else {
    n += lin(c.window_size, d) + 2 * d;
  }
  if (c.n_channels > 1) n += lin(c.n_channels * d, d);
  n += d;  // cls
  const std::size_t block = 4 * d + lin(d, 3 * d) + lin(d, d) + lin(d, c.mlp_dim) + lin(c.mlp_dim, d);
  n += c.n_layers * block;
  n += 2 * d;  // final norm
  if (c.n_classes > 0) n += lin(d, d) + lin(d, c.n_classes);
  return n;
}

namespace {

template <typename T>
Tensor<T> xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> w(Shape{in, out});
  for (auto& v : w.data()) v = static_cast<T>(u(rng));
  return w;
}

template <typename T>
void add_linear(ParamStore<T>& s, const std::string& p, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  s.add(p + ".weight", xavier<T>(in, out, rng));
  s.add(p + ".bias", Tensor<T>(Shape{out}, T(0)));
}

template <typename T>
void add_norm(ParamStore<T>& s, const std::string& p, std::size_t d) {
  s.add(p + ".gamma", Tensor<T>(Shape{d}, T(1)));
  s.add(p + ".beta", Tensor<T>(Shape{d}, T(0)));
}

template <typename T>
Var<T> apply_linear(const ParamStore<T>& s, const std::string& p, const Var<T>& x) {
  return ops::linear(x, s.get(p + ".weight"), s.get(p + ".bias"));
}

template <typename T>
Var<T> apply_norm(const ParamStore<T>& s, const std::string& p, const Var<T>& x, double eps) {
  return ops::layer_norm(x, s.get(p + ".gamma"), s.get(p + ".beta"), eps);
}

std::string block_prefix(std::size_t l) { return "blocks." + std::to_string(l); }

void check_batch(const ModelConfig& cfg, std::span<const RawSeries> batch) {
  if (batch.empty()) throw UsageError("model: empty batch");
  const std::size_t t = batch[0].length;
  for (const auto& s : batch) {
    if (s.length != t) throw UsageError("model: batch series must share one length");
    if (s.channels != cfg.n_channels) {
      throw UsageError("model: series has " + std::to_string(s.channels) + " channels, model expects " +
                       std::to_string(cfg.n_channels));
    }
  }
  if (t % cfg.window_size != 0) {
    throw UsageError("model: length " + std::to_string(t) + " is not a multiple of the window size");
  }
  if (t / cfg.window_size > cfg.max_tokens) throw UsageError("model: series exceeds max_tokens windows");
}

}  // namespace

template <typename T>
Model<T> create_model(ModelConfig cfg, std::uint64_t seed) {
  cfg.nme.embed_dim = cfg.mean_std_embed_dim;
  cfg.validate();
  Model<T> m;
  m.config = cfg;
  std::mt19937_64 rng(seed);
  auto& s = m.params;
  const std::size_t d = cfg.d_model;
  if (cfg.encoding == EncodingMode::nme) {
    add_linear(s, "embed.shape", cfg.window_size, cfg.shape_embed_dim, rng);
    add_norm(s, "embed.shape.ln", cfg.shape_embed_dim);
    init_nme_params(s, "embed.mean", cfg.nme, rng);
    init_nme_params(s, "embed.std", cfg.nme, rng);
    add_linear(s, "embed.proj", cfg.concat_width(), d, rng);
  } else {
    add_linear(s, "embed.window", cfg.window_size, d, rng);
    add_norm(s, "embed.window.ln", d);
  }
  {
    std::normal_distribution<double> n(0.0, 0.02);
    Tensor<T> cls(Shape{d});
    for (auto& v : cls.data()) v = static_cast<T>(n(rng));
    s.add("cls", std::move(cls));
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = block_prefix(l);
    add_norm(s, p + ".ln1", d);
    add_linear(s, p + ".attn.qkv", d, 3 * d, rng);
    add_linear(s, p + ".attn.out", d, d, rng);
    add_norm(s, p + ".ln2", d);
    add_linear(s, p + ".mlp.fc1", d, cfg.mlp_dim, rng);
    add_linear(s, p + ".mlp.fc2", cfg.mlp_dim, d, rng);
  }
  add_norm(s, "norm", d);
  const std::size_t channels = cfg.n_channels, classes = cfg.n_classes;
  m.config.n_channels = 1;
  m.config.n_classes = 0;
  if (channels > 1) add_channel_merge(m, channels, seed ^ 0x6d657267ULL);
  if (classes > 0) reset_classification_head(m, classes, seed ^ 0x68656164ULL);
  return m;
}

template <typename T>
void reset_classification_head(Model<T>& model, std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw UsageError("classification head needs >= 2 classes");
  for (const auto& name : model.params.names()) {
    if (name.rfind("head.", 0) == 0) model.params.erase(name);
  }
  std::mt19937_64 rng(seed);
  const std::size_t d = model.config.d_model;
  add_linear(model.params, "head.fc1", d, d, rng);
  add_linear(model.params, "head.fc2", d, n_classes, rng);
  model.config.n_classes = n_classes;
}

template <typename T>
void add_channel_merge(Model<T>& model, std::size_t n_channels, std::uint64_t seed) {
  if (n_channels < 1) throw UsageError("channel merge needs >= 1 channel");
  for (const char* suffix : {".weight", ".bias"}) {
    if (model.params.contains(std::string("embed.merge") + suffix)) model.params.erase(std::string("embed.merge") + suffix);
  }
  const std::size_t d = model.config.d_model;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1e-3);
  Tensor<T> w(Shape{n_channels * d, d});
  for (std::size_t c = 0; c < n_channels; ++c) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double base = i == j ? 1.0 / static_cast<double>(n_channels) : 0.0;
        w.at(c * d + i, j) = static_cast<T>(base + noise(rng));
      }
    }
  }
  model.params.add("embed.merge.weight", std::move(w));
  model.params.add("embed.merge.bias", Tensor<T>(Shape{d}, T(0)));
  model.config.n_channels = n_channels;
}

template <typename T>
ParamStore<T> encoder_params(const Model<T>& model) {
  ParamStore<T> out;
  for (const auto& [name, var] : model.params) {
    if (name.rfind("head.", 0) != 0) out.add(name, var.value(), var.requires_grad());
  }
  return out;
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t n, std::size_t d) {
  if (d % 2 != 0) throw UsageError("sinusoidal_pe: dimension must be even");
  Tensor<T> pe(Shape{n, d});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe.at(pos, 2 * i) = static_cast<T>(std::sin(angle));
      pe.at(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
Var<T> embed_shape(const Model<T>& model, const Var<T>& shapes) {
  if (shapes.shape().empty() || shapes.shape().back() != model.config.window_size) {
    throw UsageError("embed_shape: expected windows of length " + std::to_string(model.config.window_size));
  }
  const auto& s = model.params;
  return apply_norm(s, "embed.shape.ln", apply_linear(s, "embed.shape", shapes), model.config.ln_eps);
}

RawSeries baseline_preprocess(const RawSeries& series, EncodingMode mode, double data_mean, double data_std) {
  RawSeries out = series;
  switch (mode) {
    case EncodingMode::identity:
      break;
    case EncodingMode::zscore:
      if (!(data_std > 0.0)) throw UsageError("zscore: dataset std must be positive");
      for (double& v : out.values) v = (v - data_mean) / data_std;
      break;
    case EncodingMode::instance_norm:
      for (std::size_t c = 0; c < out.channels; ++c) {
        double m = 0.0, var = 0.0;
        const double t = static_cast<double>(out.length);
        for (std::size_t i = 0; i < out.length; ++i) m += out.at(c, i);
        m /= t;
        for (std::size_t i = 0; i < out.length; ++i) var += (out.at(c, i) - m) * (out.at(c, i) - m);
        const double sd = std::sqrt(var / t);
        for (std::size_t i = 0; i < out.length; ++i) out.at(c, i) = sd > 0.0 ? (out.at(c, i) - m) / sd : 0.0;
      }
      break;
    case EncodingMode::nme:
      throw UsageError("baseline_preprocess: nme is not a baseline mode");
  }
  return out;
}

template <typename T>
Var<T> window_tokens(const Model<T>& model, std::span<const RawSeries> batch, std::size_t channel) {
  const ModelConfig& cfg = model.config;
  check_batch(cfg, batch);
  const std::size_t w = cfg.window_size;
  const std::size_t n = batch[0].length / w;
  const std::size_t rows = batch.size() * n;
  const auto& s = model.params;

  if (cfg.encoding != EncodingMode::nme) {
    Tensor<T> windows(Shape{rows, w});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      RawSeries pre = baseline_preprocess(batch[b], cfg.encoding, cfg.data_mean, cfg.data_std);
      const double* ch = pre.channel(channel);
      for (std::size_t i = 0; i < n * w; ++i) windows[b * n * w + i] = static_cast<T>(ch[i]);
    }
    auto x = apply_linear(s, "embed.window", Var<T>::constant(std::move(windows)));
    return apply_norm(s, "embed.window.ln", x, cfg.ln_eps);
  }

  Tensor<T> shapes(Shape{rows, w}), means(Shape{rows}), stds(Shape{rows});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    RawSeries one(1, batch[b].length,
                  std::vector<double>(batch[b].channel(channel), batch[b].channel(channel) + batch[b].length));
    const TokenGrid grid = decompose(one, w, cfg.std_floor);
    for (std::size_t j = 0; j < n; ++j) {
      const WindowToken& tok = grid.at(0, j);
      for (std::size_t i = 0; i < w; ++i) shapes[(b * n + j) * w + i] = static_cast<T>(tok.shape[i]);
      means[b * n + j] = static_cast<T>(tok.mean);
      stds[b * n + j] = static_cast<T>(tok.std);
    }
  }
  auto shape_emb = embed_shape(model, Var<T>::constant(std::move(shapes)));
  auto mean_emb = nme_embed(Var<T>::constant(std::move(means)), cfg.nme, s, "embed.mean", cfg.ln_eps);
  auto std_emb = nme_embed(Var<T>::constant(std::move(stds)), cfg.nme, s, "embed.std", cfg.ln_eps);
  auto cat = ops::concat<T>({shape_emb, mean_emb, std_emb}, -1);
  return apply_linear(s, "embed.proj", cat);
}

template <typename T>
Var<T> merge_channels(const ParamStore<T>& params, const std::vector<Var<T>>& per_channel) {
  if (per_channel.empty()) throw UsageError("merge_channels: no channels");
  const auto& w = params.get("embed.merge.weight");
  const std::size_t d = per_channel[0].shape().back();
  if (w.shape()[0] != per_channel.size() * d) {
    throw UsageError("merge_channels: got " + std::to_string(per_channel.size()) + " channels, merge layer expects " +
                     std::to_string(w.shape()[0] / d));
  }
  auto cat = per_channel.size() == 1 ? per_channel[0] : ops::concat<T>(per_channel, -1);
  return ops::linear(cat, w, params.get("embed.merge.bias"));
}

namespace {

template <typename T>
Var<T> channel_tokens(const Model<T>& model, std::span<const RawSeries> batch) {
  const std::size_t c = model.config.n_channels;
  if (c == 1 && !model.params.contains("embed.merge.weight")) return window_tokens(model, batch, 0);
  std::vector<Var<T>> per;
  for (std::size_t ch = 0; ch < c; ++ch) per.push_back(window_tokens(model, batch, ch));
  return merge_channels(model.params, per);
}

template <typename T>
Var<T> transformer_block(const Model<T>& model, std::size_t layer, const Var<T>& x, std::size_t batch, std::size_t seq,
                         const ForwardOptions<T>& opts) {
  const auto& s = model.params;
  const ModelConfig& cfg = model.config;
  const std::string p = block_prefix(layer);
  const bool drop = opts.training && cfg.dropout > 0.0;
  const std::uint64_t seed = opts.dropout_seed * 1000003ULL + layer * 2;

  ops::AttentionProbs<T>* capture = nullptr;
  if (opts.attention) capture = &(*opts.attention)[layer];
  auto h = apply_norm(s, p + ".ln1", x, cfg.ln_eps);
  auto a = ops::self_attention(apply_linear(s, p + ".attn.qkv", h), batch, seq, cfg.n_heads, capture);
  a = apply_linear(s, p + ".attn.out", a);
  if (drop) a = ops::dropout(a, cfg.dropout, seed);
  auto y = ops::add(x, a);

  h = apply_norm(s, p + ".ln2", y, cfg.ln_eps);
  h = ops::gelu(apply_linear(s, p + ".mlp.fc1", h));
  h = apply_linear(s, p + ".mlp.fc2", h);
  if (drop) h = ops::dropout(h, cfg.dropout, seed + 1);
  return ops::add(y, h);
}

}  // namespace

template <typename T>
Var<T> assemble_tokens(const Model<T>& model, const RawSeries& series) {
  std::span<const RawSeries> batch(&series, 1);
  auto tokens = channel_tokens(model, batch);
  const std::size_t n = tokens.shape()[0];
  Tensor<T> pe = sinusoidal_pe<T>(n + 1, model.config.d_model);
  Tensor<T> tail(Shape{n, model.config.d_model},
                 std::vector<T>(pe.data().begin() + static_cast<std::ptrdiff_t>(model.config.d_model), pe.data().end()));
  return ops::add(tokens, Var<T>::constant(std::move(tail)));
}

template <typename T>
Var<T> encode_batch(const Model<T>& model, std::span<const RawSeries> batch, const ForwardOptions<T>& opts) {
  const ModelConfig& cfg = model.config;
  check_batch(cfg, batch);
  const std::size_t b = batch.size(), d = cfg.d_model;
  const std::size_t n = batch[0].length / cfg.window_size;
  const std::size_t seq = n + 1;

  auto tokens = ops::reshape(channel_tokens(model, batch), Shape{b, n, d});
  auto cls = ops::broadcast_to(ops::reshape(model.params.get("cls"), Shape{1, 1, d}), Shape{b, 1, d});
  auto x = ops::concat<T>({cls, tokens}, 1);
  x = ops::add(x, Var<T>::constant(sinusoidal_pe<T>(seq, d)));
  x = ops::reshape(x, Shape{b * seq, d});
  if (opts.attention) opts.attention->assign(cfg.n_layers, {});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) x = transformer_block(model, l, x, b, seq, opts);
  x = apply_norm(model.params, "norm", x, cfg.ln_eps);
  x = ops::slice(ops::reshape(x, Shape{b, seq, d}), 1, 0, 1);
  return ops::reshape(x, Shape{b, d});
}

template <typename T>
Var<T> classification_head(const Model<T>& model, const Var<T>& representations) {
  if (model.config.n_classes < 2 || !model.params.contains("head.fc2.weight")) {
    throw UsageError("classify: classification head is not configured");
  }
  const auto& s = model.params;
  return apply_linear(s, "head.fc2", ops::gelu(apply_linear(s, "head.fc1", representations)));
}

template <typename T>
Var<T> classify_batch(const Model<T>& model, std::span<const RawSeries> batch, const ForwardOptions<T>& opts) {
  if (model.config.n_classes < 2) throw UsageError("classify: classification head is not configured");
  return classification_head(model, encode_batch(model, batch, opts));
}

template <typename T>
Tensor<T> encode(const Model<T>& model, const RawSeries& series) {
  NoGradGuard guard;
  auto rep = encode_batch(model, std::span<const RawSeries>(&series, 1));
  return rep.value().reshaped(Shape{model.config.d_model});
}

template <typename T>
Tensor<T> classify(const Model<T>& model, const RawSeries& series) {
  NoGradGuard guard;
  auto logits = classify_batch(model, std::span<const RawSeries>(&series, 1));
  return logits.value().reshaped(Shape{model.config.n_classes});
}

std::vector<double> AttentionMap::head_mean(std::size_t layer) const {
  std::vector<double> out(patches, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t p = 0; p < patches; ++p) out[p] += at(layer, h, p) / static_cast<double>(heads);
  }
  return out;
}

template <typename T>
AttentionMap cls_attention(const Model<T>& model, const RawSeries& series) {
  NoGradGuard guard;
  std::vector<ops::AttentionProbs<T>> probs;
  ForwardOptions<T> opts;
  opts.attention = &probs;
  encode_batch(model, std::span<const RawSeries>(&series, 1), opts);
  AttentionMap map;
  map.layers = probs.size();
  map.heads = model.config.n_heads;
  const std::size_t seq = probs.empty() ? 1 : probs[0].seq;
  map.patches = seq - 1;
  for (std::size_t l = 0; l < map.layers; ++l) {
    for (std::size_t h = 0; h < map.heads; ++h) {
      map.cls_to_cls.push_back(static_cast<double>(probs[l].at(0, h, 0, 0)));
      for (std::size_t k = 1; k < seq; ++k) map.cls_to_patch.push_back(static_cast<double>(probs[l].at(0, h, 0, k)));
    }
  }
  return map;
}

#define NUTIME_INSTANTIATE(T)                                                                                   \
  template Model<T> create_model<T>(ModelConfig, std::uint64_t);                                               \
  template void reset_classification_head<T>(Model<T>&, std::size_t, std::uint64_t);                          \
  template void add_channel_merge<T>(Model<T>&, std::size_t, std::uint64_t);                                   \
  template ParamStore<T> encoder_params<T>(const Model<T>&);                                                   \
  template Tensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);                                               \
  template Var<T> embed_shape<T>(const Model<T>&, const Var<T>&);                                              \
  template Var<T> window_tokens<T>(const Model<T>&, std::span<const RawSeries>, std::size_t);                  \
  template Var<T> merge_channels<T>(const ParamStore<T>&, const std::vector<Var<T>>&);                         \
  template Var<T> assemble_tokens<T>(const Model<T>&, const RawSeries&);                                       \
  template Var<T> encode_batch<T>(const Model<T>&, std::span<const RawSeries>, const ForwardOptions<T>&);      \
  template Var<T> classify_batch<T>(const Model<T>&, std::span<const RawSeries>, const ForwardOptions<T>&);    \
  template Var<T> classification_head<T>(const Model<T>&, const Var<T>&);                                      \
  template Tensor<T> encode<T>(const Model<T>&, const RawSeries&);                                             \
  template Tensor<T> classify<T>(const Model<T>&, const RawSeries&);                                           \
  template AttentionMap cls_attention<T>(const Model<T>&, const RawSeries&);

NUTIME_INSTANTIATE(float)
NUTIME_INSTANTIATE(double)
#undef NUTIME_INSTANTIATE

}  // namespace nutime
