// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

namespace fixnet::util {

/// Worker count used by parallel_for. 0 = hardware concurrency.
/// Results are bit-identical for every setting; this only changes wall time.
void set_parallel_threads(int n);
int parallel_threads();

/// Runs fn over [begin, end) split into contiguous chunks, one per worker.
/// Runs inline when the range is small or a single worker is configured.
void parallel_for(int64_t begin, int64_t end, int64_t min_chunk,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace fixnet::util
