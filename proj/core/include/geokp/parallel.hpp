// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace geokp {

/// Number of worker threads implied by a jobs value (0 = hardware concurrency).
unsigned resolve_jobs(unsigned jobs);

/// Runs fn(begin, end) over a fixed even partition of [0, n). The partition
/// depends only on n and jobs, so results written to disjoint slots are
/// reproducible regardless of scheduling.
void parallel_for(std::size_t n, unsigned jobs,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace geokp
