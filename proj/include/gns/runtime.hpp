#pragma once

#include <malloc.h>

namespace gns {

/// Serves large activation buffers from the heap rather than fresh mmap pages.
inline void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace gns
