#pragma once

namespace surfreg {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// kernel. Training allocates and frees megabyte-sized buffers every op, and
/// with glibc's default mmap threshold each one page-faults afresh. Safe to
/// call more than once; a no-op off glibc.
void tune_allocator();

}  // namespace surfreg
