#pragma once

#include <cstdint>
#include <functional>

namespace ltformer {

/// Worker count used by kernels that split independent output elements.
/// Results never depend on this value; every output element is produced by
/// exactly one worker with a fixed summation order.
void set_num_threads(int n);
int num_threads();

/// Calls fn(begin, end) over a partition of [0, n). Runs inline when a
/// single worker is configured.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

/// Keeps freed blocks in the heap instead of returning them to the OS.
/// Training reallocates the same large activation buffers every step and
/// otherwise pays a page fault per touched page. No-op off glibc.
void retain_freed_memory();

}  // namespace ltformer
