// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstddef>
#include <functional>

namespace nutime {

/// Process-wide worker count used by parallel kernels. 1 selects the strict
/// single-threaded deterministic mode.
void set_thread_count(std::size_t n);
std::size_t thread_count() noexcept;

/// Splits [0, n) into contiguous chunks of at least `grain` items and runs
/// `fn(begin, end)` on each. Chunks never overlap, so kernels that write
/// disjoint outputs per index stay race-free.
void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace nutime
