// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nutime/autograd.hpp"
#include "nutime/nme.hpp"
#include "nutime/ops.hpp"
#include "nutime/tokenizer.hpp"

namespace nutime {

/// How windows are turned into tokens. `nme` is the full model; the others
/// feed raw (optionally standardised) windows through linear + LayerNorm.
enum class EncodingMode { nme, zscore, instance_norm, identity };

std::string to_string(EncodingMode mode);
EncodingMode parse_encoding(const std::string& name);

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 6;
  std::size_t n_heads = 8;
  std::size_t mlp_dim = 512;
  std::size_t window_size = 16;
  std::size_t shape_embed_dim = 64;
  /// Width of each of the mean and std embeddings; mirrored into nme.embed_dim.
  std::size_t mean_std_embed_dim = 32;
  NmeConfig nme;
  /// Upper bound on patch tokens per series.
  std::size_t max_tokens = 512;
  std::size_t n_channels = 1;
  /// 0 means no classification head.
  std::size_t n_classes = 0;
  EncodingMode encoding = EncodingMode::nme;
  /// Dataset statistics used by EncodingMode::zscore.
  double data_mean = 0.0;
  double data_std = 1.0;
  double dropout = 0.0;
  double ln_eps = 1e-5;
  double std_floor = kDefaultStdFloor;

  void validate() const;
  std::size_t concat_width() const { return shape_embed_dim + 2 * mean_std_embed_dim; }
};

/// Exact number of learnable scalars implied by a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

/// Fresh parameters for `cfg`, deterministic in `seed`. Adds the channel
/// merge layer when cfg.n_channels > 1 and the head when cfg.n_classes > 0.
template <typename T>
Model<T> create_model(ModelConfig cfg, std::uint64_t seed);

/// (Re)initialises the 2-layer MLP classification head.
template <typename T>
void reset_classification_head(Model<T>& model, std::size_t n_classes, std::uint64_t seed);

/// Adds a C*d -> d merge projection initialised to stacked identities / C
/// plus small noise, and sets config.n_channels = C.
template <typename T>
void add_channel_merge(Model<T>& model, std::size_t n_channels, std::uint64_t seed);

/// Encoder parameters only (everything except the classification head).
template <typename T>
ParamStore<T> encoder_params(const Model<T>& model);

template <typename T>
struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  /// When set, receives one entry per layer.
  std::vector<ops::AttentionProbs<T>>* attention = nullptr;
};

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
template <typename T>
Tensor<T> sinusoidal_pe(std::size_t n, std::size_t d);

/// LN(linear(shape)) for shapes[M, W] -> [M, shape_embed_dim].
template <typename T>
Var<T> embed_shape(const Model<T>& model, const Var<T>& shapes);

/// Pre-position tokens of one channel for an equal-length batch -> [B*N, d].
/// In nme mode each window becomes concat(shape, mean, std embeddings)
/// projected to d; baseline modes embed the preprocessed raw window.
template <typename T>
Var<T> window_tokens(const Model<T>& model, std::span<const RawSeries> batch, std::size_t channel);

/// Per-position concat of C channel token matrices [M, d] -> linear -> [M, d].
template <typename T>
Var<T> merge_channels(const ParamStore<T>& params, const std::vector<Var<T>>& per_channel);

/// Tokens of a single series with positions 1..N added -> [N, d].
template <typename T>
Var<T> assemble_tokens(const Model<T>& model, const RawSeries& series);

/// Applies the baseline preprocessing of `mode` (zscore, instance_norm or
/// identity) to a series.
RawSeries baseline_preprocess(const RawSeries& series, EncodingMode mode, double data_mean, double data_std);

/// Final-layer CLS representations of an equal-length batch -> [B, d].
template <typename T>
Var<T> encode_batch(const Model<T>& model, std::span<const RawSeries> batch, const ForwardOptions<T>& opts = {});

/// Raw logits [B, n_classes].
template <typename T>
Var<T> classify_batch(const Model<T>& model, std::span<const RawSeries> batch, const ForwardOptions<T>& opts = {});

/// Head applied to precomputed representations [B, d] -> [B, n_classes].
template <typename T>
Var<T> classification_head(const Model<T>& model, const Var<T>& representations);

template <typename T>
Tensor<T> encode(const Model<T>& model, const RawSeries& series);

template <typename T>
Tensor<T> classify(const Model<T>& model, const RawSeries& series);

/// CLS-row attention for every layer and head.
struct AttentionMap {
  std::size_t layers = 0, heads = 0, patches = 0;
  /// [layer][head][patch]: CLS -> patch token.
  std::vector<double> cls_to_patch;
  /// [layer][head]: CLS -> CLS.
  std::vector<double> cls_to_cls;

  double at(std::size_t layer, std::size_t head, std::size_t patch) const {
    return cls_to_patch[(layer * heads + head) * patches + patch];
  }
  /// Head-averaged CLS -> patch scores of one layer.
  std::vector<double> head_mean(std::size_t layer) const;
};

template <typename T>
AttentionMap cls_attention(const Model<T>& model, const RawSeries& series);

}  // namespace nutime
