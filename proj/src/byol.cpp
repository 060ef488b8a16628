// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/byol.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "nutime/errors.hpp"

namespace nutime {

void ByolConfig::validate() const {
  if (proj_hidden == 0 || proj_dim == 0 || pred_hidden == 0) throw UsageError("byol: head dims must be positive");
  if (!(tau_base >= 0.0 && tau_base <= 1.0)) throw UsageError("byol: tau_base must lie in [0, 1]");
  if (batch_size == 0) throw UsageError("byol: batch_size must be positive");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw UsageError("byol: base_lr must be finite and >= 0");
  if (warmup_epochs < 0.0) throw UsageError("byol: warmup_epochs must be >= 0");
  if (!(weight_decay >= 0.0)) throw UsageError("byol: weight_decay must be >= 0");
  if (!(min_crop > 0.0 && min_crop <= 1.0)) throw UsageError("byol: min_crop must lie in (0, 1]");
  if (crop_len < 2) throw UsageError("byol: crop_len must be >= 2");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = step(seed);
  h = step(h ^ a);
  h = step(h ^ b);
  return step(h ^ c);
}

template <typename T>
void init_mlp_head(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                   std::size_t out, std::mt19937_64& rng) {
  auto lin = [&](const std::string& p, std::size_t i, std::size_t o) {
    const double bound = std::sqrt(6.0 / static_cast<double>(i + o));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> w(Shape{i, o});
    for (auto& v : w.data()) v = static_cast<T>(u(rng));
    store.add(p + ".weight", std::move(w));
    store.add(p + ".bias", Tensor<T>(Shape{o}, T(0)));
  };
  lin(prefix + ".fc1", in, hidden);
  store.add(prefix + ".ln.gamma", Tensor<T>(Shape{hidden}, T(1)));
  store.add(prefix + ".ln.beta", Tensor<T>(Shape{hidden}, T(0)));
  lin(prefix + ".fc2", hidden, out);
}

template <typename T>
Var<T> mlp_head(const ParamStore<T>& s, const std::string& p, const Var<T>& x, double ln_eps) {
  auto h = ops::linear(x, s.get(p + ".fc1.weight"), s.get(p + ".fc1.bias"));
  h = ops::relu(ops::layer_norm(h, s.get(p + ".ln.gamma"), s.get(p + ".ln.beta"), ln_eps));
  return ops::linear(h, s.get(p + ".fc2.weight"), s.get(p + ".fc2.bias"));
}

template <typename T>
SiameseState<T> make_siamese(const Model<T>& encoder, const ByolConfig& cfg) {
  cfg.validate();
  SiameseState<T> st;
  st.online.config = encoder.config;
  st.online.config.n_classes = 0;
  st.online.params = encoder_params(encoder).clone();
  st.online.params.set_requires_grad(true);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x70726f6a));
  init_mlp_head(st.online.params, std::string("byol.projector"), encoder.config.d_model, cfg.proj_hidden,
                cfg.proj_dim, rng);
  init_mlp_head(st.online.params, std::string("byol.predictor"), cfg.proj_dim, cfg.pred_hidden, cfg.proj_dim, rng);

  st.target.config = st.online.config;
  for (const auto& [name, var] : st.online.params) {
    if (name.rfind("byol.predictor.", 0) == 0) continue;
    st.target.params.add(name, var.value(), false, "target/" + name);
  }
  st.optimizer.config.weight_decay = cfg.weight_decay;
  return st;
}

template <typename T>
Var<T> byol_loss(const Var<T>& p, const Var<T>& z) {
  if (p.shape() != z.shape() || p.value().rank() != 2) {
    throw UsageError("byol_loss: expected equal [B, d] shapes, got " + shape_str(p.shape()) + " and " +
                     shape_str(z.shape()));
  }
  auto zn = ops::l2_normalize(Var<T>::constant(z.value()));  // stop-gradient
  auto pn = ops::l2_normalize(p);
  auto cos = ops::sum_last(ops::mul(pn, zn));
  return ops::add_scalar(ops::scale(ops::mean(cos), -2.0), 2.0);
}

template <typename T>
Var<T> symmetric_byol_loss(const Var<T>& p1, const Var<T>& p2, const Var<T>& z1, const Var<T>& z2) {
  return ops::scale(ops::add(byol_loss(p1, z2), byol_loss(p2, z1)), 0.5);
}

template <typename T>
void momentum_update(ParamStore<T>& target, const ParamStore<T>& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("momentum_update: tau must lie in [0, 1]");
  for (const auto& [name, var] : target) {
    const Tensor<T>& src = online.value(name);
    Tensor<T>& dst = var.node()->value;
    if (src.shape() != dst.shape()) throw UsageError("momentum_update: shape mismatch for " + name);
    if (tau == 1.0) continue;
    if (tau == 0.0) {
      dst = src;
      continue;
    }
    auto d = dst.data();
    auto s = src.data();
    const T a = static_cast<T>(tau), b = static_cast<T>(1.0 - tau);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a * d[i] + b * s[i];
  }
}

double tau_at(double tau_base, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return tau_base;
  const double k = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
  return 1.0 - (1.0 - tau_base) * (std::cos(std::numbers::pi * k / static_cast<double>(total_steps)) + 1.0) / 2.0;
}

namespace {

std::vector<RawSeries> joined(std::span<const RawSeries> a, std::span<const RawSeries> b) {
  std::vector<RawSeries> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  return all;
}

}  // namespace

template <typename T>
Var<T> siamese_loss(const SiameseState<T>& st, std::span<const RawSeries> v1, std::span<const RawSeries> v2,
                    bool track_target) {
  if (v1.size() != v2.size() || v1.empty()) throw UsageError("siamese_loss: views must be non-empty and paired");
  const std::size_t b = v1.size();
  const auto all = joined(v1, v2);
  const double eps = st.online.config.ln_eps;

  auto rep = encode_batch(st.online, std::span<const RawSeries>(all));
  auto pred = mlp_head(st.online.params, "byol.predictor", mlp_head(st.online.params, "byol.projector", rep, eps), eps);

  Var<T> tz;
  {
    std::optional<NoGradGuard> guard;
    if (!track_target) guard.emplace();
    tz = mlp_head(st.target.params, "byol.projector", encode_batch(st.target, std::span<const RawSeries>(all)), eps);
  }
  auto p1 = ops::slice(pred, 0, 0, b), p2 = ops::slice(pred, 0, b, 2 * b);
  auto z1 = ops::slice(tz, 0, 0, b), z2 = ops::slice(tz, 0, b, 2 * b);
  return symmetric_byol_loss(p1, p2, z1, z2);
}

double normalized_row_spread(const Tensor<double>& rows) {
  if (rows.rank() != 2 || rows.rows() == 0) throw UsageError("normalized_row_spread: expected [N, d]");
  const std::size_t n = rows.rows(), d = rows.cols();
  std::vector<double> u(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += rows.at(i, j) * rows.at(i, j);
    const double norm = std::sqrt(sq);
    if (norm == 0.0) throw NumericError("normalized_row_spread: zero-norm row");
    for (std::size_t j = 0; j < d; ++j) u[i * d + j] = rows.at(i, j) / norm;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += u[i * d + j];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (u[i * d + j] - m) * (u[i * d + j] - m);
    total += std::sqrt(v / static_cast<double>(n));
  }
  return total / static_cast<double>(d);
}

namespace {

template <typename T>
std::string state_dump(const SiameseState<T>& st, std::size_t epoch, std::int64_t step, double lr, double tau,
                       const std::vector<double>& recent_losses, const std::string& reason) {
  nlohmann::json j;
  j["reason"] = reason;
  j["epoch"] = epoch;
  j["step"] = step;
  j["lr"] = lr;
  j["tau"] = tau;
  j["recent_losses"] = recent_losses;
  nlohmann::json norms = nlohmann::json::object();
  for (const auto& [name, var] : st.online.params) {
    double sq = 0.0;
    bool finite = true;
    for (T v : var.value().data()) {
      finite = finite && std::isfinite(static_cast<double>(v));
      sq += static_cast<double>(v) * static_cast<double>(v);
    }
    norms[name] = finite ? nlohmann::json(std::sqrt(sq)) : nlohmann::json("non-finite");
  }
  j["param_norms"] = std::move(norms);
  return j.dump(2);
}

}  // namespace

template <typename T>
PretrainResult<T> pretrain(std::span<const RawSeries> dataset, const ModelConfig& model_cfg, const ByolConfig& cfg,
                           const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw UsageError("pretrain: empty dataset");
  std::size_t max_len = 0;
  for (const auto& s : dataset) {
    if (s.channels != 1) throw UsageError("pretrain: series must be univariate (split multivariate data first)");
    if (s.length < 2) throw DataError("pretrain: series " + s.id + " is shorter than 2 points");
    max_len = std::max(max_len, s.length);
  }
  ModelConfig mc = model_cfg;
  mc.n_channels = 1;
  mc.n_classes = 0;
  const std::size_t view_len = fit_length(max_len, mc.window_size, std::min(cfg.crop_len, mc.max_tokens * mc.window_size));

  auto st = make_siamese(create_model<T>(mc, cfg.seed), cfg);

  const std::size_t n = dataset.size();
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + cfg.batch_size - 1) / cfg.batch_size);
  // Short runs clamp the warmup to the run length.
  LrSchedule sched{cfg.base_lr, std::min(cfg.warmup_epochs, static_cast<double>(cfg.epochs)),
                   static_cast<double>(cfg.epochs), steps_per_epoch};
  sched.validate();
  const std::int64_t total = sched.total_steps();

  PretrainResult<T> out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x73687566));
  std::vector<double> recent;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    double lr = 0.0, tau = cfg.tau_base;
    for (std::int64_t bi = 0; bi < steps_per_epoch; ++bi) {
      const std::size_t lo = static_cast<std::size_t>(bi) * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::vector<RawSeries> v1, v2;
      v1.reserve(hi - lo);
      v2.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t idx = order[i];
        v1.push_back(random_resized_crop(dataset[idx], mix_seed(cfg.seed, epoch, idx, 1), cfg.min_crop, view_len));
        v2.push_back(random_resized_crop(dataset[idx], mix_seed(cfg.seed, epoch, idx, 2), cfg.min_crop, view_len));
      }
      lr = lr_at(sched, st.step);
      tau = tau_at(cfg.tau_base, st.step, total);
      double loss_value = 0.0;
      try {
        auto loss = siamese_loss(st, std::span<const RawSeries>(v1), std::span<const RawSeries>(v2));
        loss_value = static_cast<double>(loss.value().item());
        auto grads = backward(loss);
        for (const auto& [name, g] : grads) {
          if (!g.all_finite()) throw NumericError("non-finite gradient for " + name);
        }
        adamw_step(st.online.params, grads, st.optimizer, lr);
        momentum_update(st.target.params, st.online.params, tau);
      } catch (const NumericError& e) {
        throw NumericError(std::string("pretrain aborted: ") + e.what(),
                           state_dump(st, epoch, st.step, lr, tau, recent, e.what()));
      }
      if (!std::isfinite(loss_value)) {
        throw NumericError("pretrain aborted: non-finite loss", state_dump(st, epoch, st.step, lr, tau, recent, "loss"));
      }
      recent.push_back(loss_value);
      if (recent.size() > 16) recent.erase(recent.begin());
      loss_sum += loss_value;
      ++st.step;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(steps_per_epoch), lr, tau};
    out.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  // Collapse witness on the first (un-augmented) batch.
  {
    NoGradGuard guard;
    std::vector<RawSeries> first;
    for (std::size_t i = 0; i < std::min(n, cfg.batch_size); ++i) first.push_back(resize_linear(dataset[i], view_len));
    auto z = mlp_head(st.online.params, "byol.projector", encode_batch(st.online, std::span<const RawSeries>(first)),
                      mc.ln_eps);
    out.projection_std = normalized_row_spread(z.value().template cast<double>());
  }

  out.steps = st.step;
  out.model.config = mc;
  for (const auto& [name, var] : st.online.params) {
    if (name.rfind("byol.", 0) == 0) continue;
    out.model.params.add(name, var.value());
  }
  return out;
}

std::string loss_log_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mean_loss,lr,tau\n";
  for (const auto& r : log) os << r.epoch << ',' << r.mean_loss << ',' << r.lr << ',' << r.tau << '\n';
  return os.str();
}

#define NUTIME_INSTANTIATE(T)                                                                                        \
  template void init_mlp_head<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t,         \
                                 std::mt19937_64&);                                                                  \
  template Var<T> mlp_head<T>(const ParamStore<T>&, const std::string&, const Var<T>&, double);                     \
  template SiameseState<T> make_siamese<T>(const Model<T>&, const ByolConfig&);                                     \
  template Var<T> byol_loss<T>(const Var<T>&, const Var<T>&);                                                       \
  template Var<T> symmetric_byol_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);               \
  template void momentum_update<T>(ParamStore<T>&, const ParamStore<T>&, double);                                   \
  template Var<T> siamese_loss<T>(const SiameseState<T>&, std::span<const RawSeries>, std::span<const RawSeries>,   \
                                  bool);                                                                             \
  template PretrainResult<T> pretrain<T>(std::span<const RawSeries>, const ModelConfig&, const ByolConfig&,         \
                                         const std::function<void(const EpochRecord&)>&);

NUTIME_INSTANTIATE(float)
NUTIME_INSTANTIATE(double)
#undef NUTIME_INSTANTIATE

}  // namespace nutime
