// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nutime/errors.hpp"

namespace nutime {

RawSeries::RawSeries(std::size_t c, std::size_t t, std::vector<double> v, std::optional<int> lab, std::string name)
    : channels(c), length(t), values(std::move(v)), label(lab), id(std::move(name)) {
  if (values.size() != channels * length) throw UsageError("RawSeries: values do not match C x T");
}

RawSeries RawSeries::univariate(std::vector<double> v, std::optional<int> lab, std::string name) {
  const std::size_t t = v.size();
  return RawSeries(1, t, std::move(v), lab, std::move(name));
}

void RawSeries::validate() const {
  if (channels < 1 || length < 1) throw DataError("series " + id + ": needs C >= 1 and T >= 1");
  if (values.size() != channels * length) throw DataError("series " + id + ": value count does not match C x T");
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("series " + id + ": non-finite value");
  }
}

TokenGrid decompose(const RawSeries& series, std::size_t window_size, double std_floor) {
  if (window_size < 2) throw UsageError("decompose: window size must be >= 2");
  if (series.length % window_size != 0) {
    throw UsageError("decompose: length " + std::to_string(series.length) + " is not a multiple of window size " +
                     std::to_string(window_size));
  }
  TokenGrid grid;
  grid.channels = series.channels;
  grid.windows = series.length / window_size;
  grid.window_size = window_size;
  grid.std_floor = std_floor;
  grid.tokens.reserve(grid.channels * grid.windows);
  const double w = static_cast<double>(window_size);
  for (std::size_t c = 0; c < series.channels; ++c) {
    const double* ch = series.channel(c);
    for (std::size_t n = 0; n < grid.windows; ++n) {
      const double* x = ch + n * window_size;
      WindowToken tok;
      tok.shape.assign(window_size, 0.0);
      const bool constant = std::all_of(x, x + window_size, [&](double v) { return v == x[0]; });
      if (constant) {
        tok.mean = x[0];
        tok.std = 0.0;
      } else {
        double m = 0.0;
        for (std::size_t i = 0; i < window_size; ++i) m += x[i];
        m /= w;
        double v = 0.0;
        for (std::size_t i = 0; i < window_size; ++i) v += (x[i] - m) * (x[i] - m);
        tok.mean = m;
        tok.std = std::sqrt(v / w);
        const double denom = std::max(tok.std, std_floor);
        for (std::size_t i = 0; i < window_size; ++i) tok.shape[i] = (x[i] - m) / denom;
      }
      grid.tokens.push_back(std::move(tok));
    }
  }
  return grid;
}

RawSeries reconstruct(const TokenGrid& grid) {
  const std::size_t t = grid.windows * grid.window_size;
  RawSeries out(grid.channels, t, std::vector<double>(grid.channels * t));
  for (std::size_t c = 0; c < grid.channels; ++c) {
    for (std::size_t n = 0; n < grid.windows; ++n) {
      const WindowToken& tok = grid.at(c, n);
      const double s = std::max(tok.std, grid.std_floor);
      for (std::size_t i = 0; i < grid.window_size; ++i) {
        out.at(c, n * grid.window_size + i) = tok.shape[i] * s + tok.mean;
      }
    }
  }
  return out;
}

namespace {

void interpolate(const double* src, std::size_t n, double* dst, std::size_t m) {
  if (n == 1) {
    std::fill(dst, dst + m, src[0]);
    return;
  }
  const double step = static_cast<double>(n - 1) / static_cast<double>(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * step;
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= n - 1) {
      dst[i] = src[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(lo);
    dst[i] = frac == 0.0 ? src[lo] : src[lo] + frac * (src[lo + 1] - src[lo]);
  }
  dst[m - 1] = src[n - 1];
}

}  // namespace

RawSeries resize_linear(const RawSeries& series, std::size_t target_len) {
  if (target_len < 2) throw UsageError("resize_linear: target length must be >= 2");
  if (target_len == series.length) return series;
  RawSeries out(series.channels, target_len, std::vector<double>(series.channels * target_len), series.label,
                series.id);
  for (std::size_t c = 0; c < series.channels; ++c) {
    interpolate(series.channel(c), series.length, out.values.data() + c * target_len, target_len);
  }
  return out;
}

RawSeries random_resized_crop(const RawSeries& series, std::uint64_t seed, double min_frac, std::size_t out_len) {
  if (series.length < 2) throw UsageError("random_resized_crop: series needs at least 2 points");
  if (!(min_frac > 0.0 && min_frac <= 1.0)) throw UsageError("random_resized_crop: min_frac must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::size_t crop = series.length;
  if (min_frac < 1.0) {
    std::uniform_real_distribution<double> frac(min_frac, 1.0);
    const double f = frac(rng);
    crop = static_cast<std::size_t>(std::llround(f * static_cast<double>(series.length)));
    crop = std::clamp<std::size_t>(crop, 2, series.length);
  }
  std::uniform_int_distribution<std::size_t> start_dist(0, series.length - crop);
  const std::size_t start = crop == series.length ? 0 : start_dist(rng);
  RawSeries cropped(series.channels, crop, std::vector<double>(series.channels * crop), series.label, series.id);
  for (std::size_t c = 0; c < series.channels; ++c) {
    std::copy_n(series.channel(c) + start, crop, cropped.values.data() + c * crop);
  }
  return resize_linear(cropped, out_len);
}

std::size_t fit_length(std::size_t length, std::size_t window_size, std::size_t cap) {
  if (window_size == 0) throw UsageError("fit_length: zero window size");
  const std::size_t up = ((length + window_size - 1) / window_size) * window_size;
  const std::size_t capped = std::max(window_size, (cap / window_size) * window_size);
  return std::max(window_size, std::min(up, capped));
}

}  // namespace nutime
