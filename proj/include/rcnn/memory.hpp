#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rcnn {

/// Keeps large tensor buffers on the heap instead of fresh mmap/munmap
/// pairs per allocation; the page faults otherwise cost about a third of
/// training time. No-op outside glibc.
inline void keep_large_allocations_on_heap() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace rcnn
