// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace npva {

/// Worker count: NPVA_THREADS when set and positive, hardware concurrency
/// otherwise.
int worker_count();

/// Splits [0, n) into `threads` contiguous chunks and calls
/// fn(chunk_index, begin, end) for each, one thread per chunk. Chunk
/// boundaries depend only on n and threads.
void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(int, std::size_t, std::size_t)>& fn);

} // namespace npva
