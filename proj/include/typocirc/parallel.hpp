#pragma once

#include <cstddef>
#include <functional>

namespace typocirc {

/// Caps the worker count used by batch loops. 0 selects the hardware default.
void set_num_threads(unsigned n);
unsigned num_threads();

/// Runs fn(i) for i in [0, n) across up to num_threads() workers in
/// contiguous chunks. fn must only write to per-index state. The first
/// exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace typocirc
