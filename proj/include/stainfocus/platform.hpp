#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace stainfocus {

// Training allocates and frees the same large im2col and GEMM buffers every
// step; keeping them on the heap instead of mmap avoids page-fault churn.
inline void configure_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum on 64-bit
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace stainfocus
