#pragma once
// Process-level setup for the tool and test binaries.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gpna {

/// Keeps freed tensor buffers in the heap instead of returning them to the OS.
/// Training allocates and drops the same large buffers every step; with glibc
/// defaults each one is a fresh mmap and a round of page faults.
inline void tune_allocator()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1024 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, -1);  // never trim
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace gpna
