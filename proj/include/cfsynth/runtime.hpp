#pragma once

namespace cfs {

// Keeps freed tensor buffers in the heap instead of returning them to the
// OS after every op. Safe to call more than once; no-op off glibc.
void tune_allocator();

}  // namespace cfs
