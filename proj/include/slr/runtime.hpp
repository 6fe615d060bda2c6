#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace slr {

/// Keeps freed blocks in the heap instead of returning them to the OS. The tape
/// allocates and frees the same large buffers every step; without this glibc
/// unmaps and re-faults them each time. Process-wide, so only entry points call it.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace slr
