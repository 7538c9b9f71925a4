#include "fsdm/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fsdm {

void prefer_heap_allocation() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace fsdm
