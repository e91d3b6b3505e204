#pragma once

namespace piseg {

/// Keeps large temporaries on the heap instead of mapping and unmapping them
/// on every allocation. No-op outside glibc.
void tune_allocator();

}  // namespace piseg
