// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/nme.hpp"

#include <cmath>

#include "nutime/errors.hpp"
#include "nutime/ops.hpp"

namespace nutime {

std::vector<double> NmeConfig::default_scales() {
  std::vector<double> s;
  for (int e = -4; e <= 4; ++e) s.push_back(std::pow(10.0, e));
  return s;
}

void NmeConfig::validate() const {
  if (scales.empty()) throw UsageError("nme: at least one scale required");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0) || !std::isfinite(scales[i])) throw UsageError("nme: scales must be positive");
    if (i > 0 && !(scales[i] > scales[i - 1])) throw UsageError("nme: scales must be strictly increasing");
  }
  if (!(epsilon > 0.0)) throw UsageError("nme: epsilon must be positive");
  if (embed_dim < 2) throw UsageError("nme: embed_dim must be >= 2");
  if (!(weight_clamp > 0.0)) throw UsageError("nme: weight_clamp must be positive");
}

std::vector<double> scale_weights(double x, const NmeConfig& cfg) {
  const double ax = std::fabs(x);
  std::vector<double> w(cfg.scales.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double l = std::fabs(std::log(ax / cfg.scales[i] + cfg.epsilon));
    // 1/l exceeds the clamp (or is infinite) near the singularity.
    w[i] = l * cfg.weight_clamp <= 1.0 ? cfg.weight_clamp : 1.0 / l;
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> ensemble_weights(double x, const NmeConfig& cfg) {
  if (cfg.weighted) return scale_weights(x, cfg);
  return std::vector<double>(cfg.scales.size(), 1.0 / static_cast<double>(cfg.scales.size()));
}

std::string nme_scale_prefix(const std::string& prefix, std::size_t i) {
  return prefix + ".scale" + std::to_string(i);
}

template <typename T>
void init_nme_params(ParamStore<T>& store, const std::string& prefix, const NmeConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  std::normal_distribution<double> nw(0.0, cfg.init_std_w), nb(0.0, cfg.init_std_b);
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
    const std::string p = nme_scale_prefix(prefix, i);
    Tensor<T> w(Shape{d}), b(Shape{d});
    for (std::size_t j = 0; j < d; ++j) w[j] = static_cast<T>(nw(rng));
    for (std::size_t j = 0; j < d; ++j) b[j] = static_cast<T>(nb(rng));
    store.add(p + ".w", std::move(w));
    store.add(p + ".b", std::move(b));
    store.add(p + ".gamma", Tensor<T>(Shape{d}, T(1)));
    store.add(p + ".beta", Tensor<T>(Shape{d}, T(0)));
  }
}

template <typename T>
Var<T> basic_block(const Var<T>& x, double k, const ParamStore<T>& store, const std::string& scale_prefix,
                   double ln_eps) {
  if (!(k > 0.0)) throw UsageError("basic_block: k must be positive");
  const std::size_t batch = x.value().size();
  auto col = ops::reshape(x, Shape{batch, 1});
  auto z = ops::add(ops::mul(col, store.get(scale_prefix + ".w")), ops::scale(store.get(scale_prefix + ".b"), k));
  return ops::layer_norm(z, store.get(scale_prefix + ".gamma"), store.get(scale_prefix + ".beta"), ln_eps * k * k);
}

template <typename T>
Var<T> nme_embed(const Var<T>& x, const NmeConfig& cfg, const ParamStore<T>& store, const std::string& prefix,
                 double ln_eps) {
  const std::size_t batch = x.value().size();
  const std::size_t n = cfg.scales.size();
  std::vector<std::vector<double>> alpha(batch);
  for (std::size_t b = 0; b < batch; ++b) alpha[b] = ensemble_weights(static_cast<double>(x.value()[b]), cfg);
  Var<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto y = basic_block(x, cfg.scales[i], store, nme_scale_prefix(prefix, i), ln_eps);
    Tensor<T> a(Shape{batch, 1});
    for (std::size_t b = 0; b < batch; ++b) a[b] = static_cast<T>(alpha[b][i]);
    auto term = ops::mul(y, Var<T>::constant(std::move(a)));
    out = out ? ops::add(out, term) : term;
  }
  return out;
}

#define NUTIME_INSTANTIATE(T)                                                                               \
  template void init_nme_params<T>(ParamStore<T>&, const std::string&, const NmeConfig&, std::mt19937_64&); \
  template Var<T> basic_block<T>(const Var<T>&, double, const ParamStore<T>&, const std::string&, double);  \
  template Var<T> nme_embed<T>(const Var<T>&, const NmeConfig&, const ParamStore<T>&, const std::string&, double);

NUTIME_INSTANTIATE(float)
NUTIME_INSTANTIATE(double)
#undef NUTIME_INSTANTIATE

}  // namespace nutime
