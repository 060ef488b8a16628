// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nutime {

/// A C x T series stored channel-major.
struct RawSeries {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::vector<double> values;
  std::optional<int> label;
  std::string id;

  RawSeries() = default;
  RawSeries(std::size_t c, std::size_t t, std::vector<double> v, std::optional<int> lab = std::nullopt,
            std::string name = {});
  static RawSeries univariate(std::vector<double> v, std::optional<int> lab = std::nullopt, std::string name = {});

  double at(std::size_t c, std::size_t t) const { return values[c * length + t]; }
  double& at(std::size_t c, std::size_t t) { return values[c * length + t]; }
  const double* channel(std::size_t c) const { return values.data() + c * length; }
  /// Throws DataError unless shape and finiteness invariants hold.
  void validate() const;
};

/// One window of one channel: normalised shape plus its mean and std.
struct WindowToken {
  std::vector<double> shape;
  double mean = 0.0;
  double std = 0.0;
};

/// Tokens of a series, indexed [channel][window].
struct TokenGrid {
  std::size_t channels = 0;
  std::size_t windows = 0;
  std::size_t window_size = 0;
  /// Divisor floor used by decompose; reconstruct scales by max(std, floor).
  double std_floor = 0.0;
  std::vector<WindowToken> tokens;

  const WindowToken& at(std::size_t c, std::size_t n) const { return tokens[c * windows + n]; }
};

inline constexpr double kDefaultStdFloor = 1e-5;

/// Splits every channel into non-overlapping windows of `window_size` and
/// normalises each by its mean and population std. Windows whose std does
/// not exceed `std_floor` are divided by the floor instead; exactly
/// constant windows yield an all-zero shape and std 0.
TokenGrid decompose(const RawSeries& series, std::size_t window_size, double std_floor = kDefaultStdFloor);

/// Inverse of decompose: shape * max(std, std_floor) + mean, windows concatenated.
RawSeries reconstruct(const TokenGrid& grid);

/// Per-channel linear interpolation onto `target_len` points with both
/// endpoints preserved.
RawSeries resize_linear(const RawSeries& series, std::size_t target_len);

/// Crops a contiguous sub-sequence covering a uniform fraction in
/// [min_frac, 1] of the series at a uniform start, then resizes it to
/// `out_len`. Deterministic in `seed`.
RawSeries random_resized_crop(const RawSeries& series, std::uint64_t seed, double min_frac = 0.8,
                              std::size_t out_len = 512);

/// Smallest multiple of `window_size` >= `length`, capped at `cap`
/// (rounded down to a multiple of the window).
std::size_t fit_length(std::size_t length, std::size_t window_size, std::size_t cap = 512);

}  // namespace nutime
