#include "surfreg/runtime.hpp"

#include <cstddef>  // defines __GLIBC__

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace surfreg {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // the largest value glibc accepts
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace surfreg
