#pragma once

namespace fsdm {

// Keeps large tensor buffers on the heap instead of fresh mmap regions, which
// avoids repeated page faults when graphs of multi-megabyte arrays are built
// and freed every step. No effect outside glibc.
void prefer_heap_allocation();

}  // namespace fsdm
