// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nutime/byol.hpp"
#include "nutime/errors.hpp"
#include "nutime/optim.hpp"

namespace nutime {

void FinetuneConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("finetune: lr must be finite and >= 0");
  if (batch_size == 0) throw UsageError("finetune: batch_size must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw UsageError("finetune: warmup_fraction in [0, 1]");
  if (!(weight_decay >= 0.0)) throw UsageError("finetune: weight_decay must be >= 0");
  if (max_len < 2) throw UsageError("finetune: max_len must be >= 2");
}

void EpisodeSpec::validate() const {
  if (n_shots < 1) throw UsageError("few-shot: shots must be >= 1");
  if (n_episodes < 1) throw UsageError("few-shot: episodes must be >= 1");
  if (!(lr >= 0.0)) throw UsageError("few-shot: lr must be >= 0");
}

std::size_t count_classes(std::span<const RawSeries> data) {
  int hi = -1;
  for (const auto& s : data) {
    if (!s.label) throw DataError("series " + s.id + " has no label");
    if (*s.label < 0) throw DataError("series " + s.id + " has a negative label");
    hi = std::max(hi, *s.label);
  }
  return static_cast<std::size_t>(hi + 1);
}

std::vector<int> labels_of(std::span<const RawSeries> data) {
  std::vector<int> y;
  y.reserve(data.size());
  for (const auto& s : data) {
    if (!s.label) throw DataError("series " + s.id + " has no label");
    y.push_back(*s.label);
  }
  return y;
}

std::size_t input_length(std::span<const RawSeries> data, std::size_t window_size, std::size_t max_len) {
  if (data.empty()) throw UsageError("empty dataset");
  std::size_t longest = 0;
  for (const auto& s : data) longest = std::max(longest, s.length);
  return fit_length(longest, window_size, max_len);
}

std::vector<RawSeries> resize_all(std::span<const RawSeries> data, std::size_t length) {
  std::vector<RawSeries> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(resize_linear(s, length));
  return out;
}

namespace {

template <typename T, typename Fn>
Tensor<double> batched_rows(std::span<const RawSeries> data, std::size_t length, std::size_t batch, Fn&& fn) {
  if (data.empty()) throw UsageError("empty dataset");
  if (batch == 0) batch = 64;
  NoGradGuard guard;
  Tensor<double> out;
  std::size_t cols = 0;
  for (std::size_t lo = 0; lo < data.size(); lo += batch) {
    const std::size_t hi = std::min(data.size(), lo + batch);
    auto chunk = resize_all(data.subspan(lo, hi - lo), length);
    const Tensor<T> v = fn(std::span<const RawSeries>(chunk)).value();
    if (lo == 0) {
      cols = v.cols();
      out = Tensor<double>(Shape{data.size(), cols});
    }
    for (std::size_t i = 0; i < v.rows(); ++i) {
      for (std::size_t j = 0; j < cols; ++j) out.at(lo + i, j) = static_cast<double>(v.at(i, j));
    }
  }
  return out;
}

template <typename T>
Model<T> deep_copy(const Model<T>& m) {
  return Model<T>{m.config, m.params.clone()};
}

}  // namespace

template <typename T>
Tensor<double> representations(const Model<T>& model, std::span<const RawSeries> data, std::size_t length,
                               std::size_t batch_size) {
  return batched_rows<T>(data, length, batch_size, [&](std::span<const RawSeries> b) { return encode_batch(model, b); });
}

template <typename T>
Tensor<double> predict_logits(const Model<T>& model, std::span<const RawSeries> data, std::size_t length,
                              std::size_t batch_size) {
  return batched_rows<T>(data, length, batch_size,
                         [&](std::span<const RawSeries> b) { return classify_batch(model, b); });
}

std::vector<int> argmax_rows(const Tensor<double>& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
Metrics evaluate(const Model<T>& model, std::span<const RawSeries> data, std::size_t length, std::size_t batch_size) {
  const auto y = labels_of(data);
  const auto pred = argmax_rows(predict_logits(model, data, length, batch_size));
  return metrics_from(y, pred, model.config.n_classes);
}

template <typename T>
Metrics evaluate_ensemble(std::span<const Model<T>> models, std::span<const RawSeries> data, std::size_t length,
                          std::size_t batch_size) {
  if (models.empty()) throw UsageError("evaluate_ensemble: no models");
  Tensor<double> sum = predict_logits(models[0], data, length, batch_size);
  for (std::size_t m = 1; m < models.size(); ++m) {
    const auto l = predict_logits(models[m], data, length, batch_size);
    if (l.shape() != sum.shape()) throw UsageError("evaluate_ensemble: models disagree on class count");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += l[i];
  }
  for (auto& v : sum.data()) v /= static_cast<double>(models.size());
  return metrics_from(labels_of(data), argmax_rows(sum), models[0].config.n_classes);
}

template <typename T>
void prepare_for_task(Model<T>& model, std::size_t n_channels, std::size_t n_classes, std::uint64_t seed) {
  if (n_channels != model.config.n_channels) {
    if (model.config.n_channels != 1 && n_channels != 1) {
      throw UsageError("model was built for " + std::to_string(model.config.n_channels) + " channels, data has " +
                       std::to_string(n_channels));
    }
    if (n_channels == 1) {
      model.params.erase("embed.merge.weight");
      model.params.erase("embed.merge.bias");
      model.config.n_channels = 1;
    } else {
      add_channel_merge(model, n_channels, mix_seed(seed, 0x6d657267));
    }
  }
  if (model.config.n_classes != n_classes || !model.params.contains("head.fc2.weight")) {
    reset_classification_head(model, n_classes, mix_seed(seed, 0x68656164));
  }
}

namespace {

template <typename T>
void check_task(std::span<const RawSeries> train) {
  if (train.empty()) throw UsageError("finetune: empty training set");
  const auto y = labels_of(train);
  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; })) {
    throw DataError("finetune: training set has a single class");
  }
  for (const auto& s : train) {
    if (s.channels != train[0].channels) throw DataError("finetune: mixed channel counts");
  }
}

bool better(const Metrics& a, const Metrics& b) {
  return a.top1 > b.top1 || (a.top1 == b.top1 && a.macro_f1 > b.macro_f1);
}

}  // namespace

template <typename T>
FinetuneResult<T> finetune(Model<T> model, std::span<const RawSeries> train, std::span<const RawSeries> val,
                           const FinetuneConfig& cfg,
                           const std::function<void(std::size_t, double, const Metrics&)>& on_epoch) {
  cfg.validate();
  check_task<T>(train);
  if (val.empty()) throw UsageError("finetune: empty validation set");
  model = deep_copy(model);
  model.params.set_requires_grad(true);
  const std::size_t k = std::max(count_classes(train), count_classes(val));
  prepare_for_task(model, train[0].channels, k, cfg.seed);

  FinetuneResult<T> out;
  out.length = input_length(train, model.config.window_size, cfg.max_len);
  const auto x = resize_all(train, out.length);
  const auto y = labels_of(train);

  out.val = evaluate(model, val, out.length, cfg.batch_size);
  out.model = deep_copy(model);
  out.best_epoch = 0;
  if (cfg.epochs == 0) return out;

  const std::size_t n = x.size();
  const auto steps_per_epoch = static_cast<std::int64_t>((n + cfg.batch_size - 1) / cfg.batch_size);
  LrSchedule sched{cfg.lr, cfg.warmup_fraction * static_cast<double>(cfg.epochs), static_cast<double>(cfg.epochs),
                   steps_per_epoch};
  sched.validate();
  OptimizerState<T> opt;
  opt.config.weight_decay = cfg.weight_decay;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x66696e65));
  std::int64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::int64_t bi = 0; bi < steps_per_epoch; ++bi) {
      const std::size_t lo = static_cast<std::size_t>(bi) * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::vector<RawSeries> batch;
      std::vector<int> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        batch.push_back(x[order[i]]);
        labels.push_back(y[order[i]]);
      }
      ForwardOptions<T> fo;
      fo.training = true;
      fo.dropout_seed = mix_seed(cfg.seed, epoch, static_cast<std::uint64_t>(bi));
      auto loss = ops::cross_entropy(classify_batch(model, std::span<const RawSeries>(batch), fo),
                                     std::span<const int>(labels));
      loss_sum += static_cast<double>(loss.value().item());
      adamw_step(model.params, backward(loss), opt, lr_at(sched, step));
      ++step;
    }
    const double mean_loss = loss_sum / static_cast<double>(steps_per_epoch);
    out.train_loss.push_back(mean_loss);
    const Metrics m = evaluate(model, val, out.length, cfg.batch_size);
    if (better(m, out.val)) {
      out.val = m;
      out.model = deep_copy(model);
      out.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, mean_loss, m);
  }
  return out;
}

Metrics linear_probe_features(const Tensor<double>& train_x, std::span<const int> train_y,
                              const Tensor<double>& test_x, std::span<const int> test_y, std::size_t n_classes,
                              const ProbeConfig& cfg) {
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.cols() != test_x.cols()) {
    throw UsageError("linear_probe: feature shapes disagree");
  }
  if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size()) {
    throw UsageError("linear_probe: label count mismatch");
  }
  if (n_classes < 2) throw UsageError("linear_probe: needs >= 2 classes");
  const std::size_t d = train_x.cols();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < train_x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += train_x.at(i, j);
  }
  for (auto& v : mu) v /= static_cast<double>(train_x.rows());
  for (std::size_t i = 0; i < train_x.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) sd[j] += (train_x.at(i, j) - mu[j]) * (train_x.at(i, j) - mu[j]);
  }
  for (auto& v : sd) {
    v = std::sqrt(v / static_cast<double>(train_x.rows()));
    if (v < 1e-12) v = 1.0;
  }
  auto standardise = [&](const Tensor<double>& x) {
    Tensor<double> z(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) z.at(i, j) = (x.at(i, j) - mu[j]) / sd[j];
    }
    return z;
  };
  const auto xtr = Var<double>::constant(standardise(train_x));
  ParamStore<double> p;
  {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> n(0.0, 0.01);
    Tensor<double> w(Shape{d, n_classes});
    for (auto& v : w.data()) v = n(rng);
    p.add("w", std::move(w));
    p.add("b", Tensor<double>(Shape{n_classes}, 0.0));
  }
  OptimizerState<double> opt;
  opt.config.weight_decay = 0.0;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    auto loss = ops::cross_entropy(ops::linear(xtr, p.get("w"), p.get("b")), train_y);
    adamw_step(p, backward(loss), opt, cfg.lr);
  }
  NoGradGuard guard;
  const auto logits = ops::linear(Var<double>::constant(standardise(test_x)), p.get("w"), p.get("b")).value();
  return metrics_from(test_y, argmax_rows(logits), n_classes);
}

template <typename T>
Metrics linear_probe(const Model<T>& model, std::span<const RawSeries> train, std::span<const RawSeries> test,
                     const ProbeConfig& cfg, std::size_t max_len) {
  check_task<T>(train);
  const std::size_t len = input_length(train, model.config.window_size, max_len);
  const auto ytr = labels_of(train), yte = labels_of(test);
  const std::size_t k = std::max(count_classes(train), count_classes(test));
  return linear_probe_features(representations(model, train, len), ytr, representations(model, test, len), yte, k,
                               cfg);
}

template <typename T>
FewShotResult few_shot_eval(const Model<T>& model, std::span<const RawSeries> pool, std::span<const RawSeries> query,
                            const EpisodeSpec& spec) {
  spec.validate();
  if (pool.empty() || query.empty()) throw UsageError("few-shot: empty pool or query split");
  const std::size_t k = std::max(count_classes(pool), count_classes(query));
  if (k < 2) throw DataError("few-shot: needs >= 2 classes");
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[*pool[i].label].push_back(i);
  for (std::size_t c = 0; c < k; ++c) {
    if (by_class[c].size() < spec.n_shots) {
      throw DataError("few-shot: class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " samples, need " + std::to_string(spec.n_shots));
    }
  }
  const std::size_t len = input_length(pool, model.config.window_size, spec.max_len);
  FewShotResult r;
  for (std::size_t e = 0; e < spec.n_episodes; ++e) {
    std::mt19937_64 rng(mix_seed(spec.seed, 0x65706973, e));
    std::vector<RawSeries> support;
    std::vector<int> labels;
    for (std::size_t c = 0; c < k; ++c) {
      auto idx = by_class[c];
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t s = 0; s < spec.n_shots; ++s) {
        support.push_back(resize_linear(pool[idx[s]], len));
        labels.push_back(static_cast<int>(c));
      }
    }
    Model<T> m = deep_copy(model);
    m.params.set_requires_grad(true);
    m.config.n_classes = 0;
    prepare_for_task(m, pool[0].channels, k, mix_seed(spec.seed, e));
    OptimizerState<T> opt;
    for (std::size_t s = 0; s < spec.steps; ++s) {
      auto loss = ops::cross_entropy(classify_batch(m, std::span<const RawSeries>(support)),
                                     std::span<const int>(labels));
      adamw_step(m.params, backward(loss), opt, spec.lr);
    }
    r.episodes.push_back(evaluate(m, query, len));
  }
  const double n = static_cast<double>(r.episodes.size());
  for (const auto& m : r.episodes) {
    r.mean.top1 += m.top1 / n;
    r.mean.macro_f1 += m.macro_f1 / n;
  }
  if (r.episodes.size() > 1) {
    for (const auto& m : r.episodes) {
      r.std.top1 += (m.top1 - r.mean.top1) * (m.top1 - r.mean.top1);
      r.std.macro_f1 += (m.macro_f1 - r.mean.macro_f1) * (m.macro_f1 - r.mean.macro_f1);
    }
    r.std.top1 = std::sqrt(r.std.top1 / (n - 1));
    r.std.macro_f1 = std::sqrt(r.std.macro_f1 / (n - 1));
  }
  return r;
}

ClusterMetrics cluster_eval(const Tensor<double>& reps, std::span<const int> labels, std::size_t k,
                            std::uint64_t seed) {
  if (reps.rank() != 2 || reps.rows() != labels.size()) throw UsageError("cluster_eval: shape mismatch");
  const auto km = kmeans(reps, k, seed);
  return cluster_metrics(reps, labels, km.assignment);
}

std::vector<double> anomaly_scores(const Tensor<double>& normal, const Tensor<double>& x) {
  if (normal.rank() != 2 || normal.rows() == 0) throw UsageError("anomaly: empty normal set");
  if (x.rank() != 2 || x.cols() != normal.cols()) throw UsageError("anomaly: feature width mismatch");
  const std::size_t d = normal.cols();
  std::vector<double> c(d, 0.0);
  for (std::size_t i = 0; i < normal.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) c[j] += normal.at(i, j);
  }
  for (auto& v : c) v /= static_cast<double>(normal.rows());
  std::vector<double> s(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += (x.at(i, j) - c[j]) * (x.at(i, j) - c[j]);
    s[i] = std::sqrt(sq);
  }
  return s;
}

AnomalyMetrics anomaly_eval(const Tensor<double>& normal_train, const Tensor<double>& test,
                            std::span<const int> test_labels, double q) {
  if (test.rows() != test_labels.size()) throw UsageError("anomaly: label count mismatch");
  AnomalyMetrics m;
  m.threshold = percentile(anomaly_scores(normal_train, normal_train), q);
  const auto s = anomaly_scores(normal_train, test);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool flagged = s[i] > m.threshold;
    const bool anomalous = test_labels[i] == 1;
    tp += flagged && anomalous;
    fp += flagged && !anomalous;
    fn += !flagged && anomalous;
  }
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.auroc = auroc(s, test_labels);
  return m;
}

#define NUTIME_INSTANTIATE(T)                                                                                      \
  template Tensor<double> representations<T>(const Model<T>&, std::span<const RawSeries>, std::size_t, std::size_t); \
  template Tensor<double> predict_logits<T>(const Model<T>&, std::span<const RawSeries>, std::size_t, std::size_t);  \
  template Metrics evaluate<T>(const Model<T>&, std::span<const RawSeries>, std::size_t, std::size_t);               \
  template Metrics evaluate_ensemble<T>(std::span<const Model<T>>, std::span<const RawSeries>, std::size_t,          \
                                        std::size_t);                                                              \
  template void prepare_for_task<T>(Model<T>&, std::size_t, std::size_t, std::uint64_t);                          \
  template FinetuneResult<T> finetune<T>(Model<T>, std::span<const RawSeries>, std::span<const RawSeries>,          \
                                         const FinetuneConfig&,                                                    \
                                         const std::function<void(std::size_t, double, const Metrics&)>&);         \
  template Metrics linear_probe<T>(const Model<T>&, std::span<const RawSeries>, std::span<const RawSeries>,         \
                                   const ProbeConfig&, std::size_t);                                               \
  template FewShotResult few_shot_eval<T>(const Model<T>&, std::span<const RawSeries>, std::span<const RawSeries>,  \
                                          const EpisodeSpec&);

NUTIME_INSTANTIATE(float)
NUTIME_INSTANTIATE(double)
#undef NUTIME_INSTANTIATE

}  // namespace nutime
