#pragma once

#include <functional>

namespace corrflow {

/// Process-wide worker count for parallel_for. 1 = serial. The partition of
/// work into blocks depends only on the range, never on the thread count, so
/// results are bit-identical for any setting.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n). fn must write only to slots owned by i;
/// no reductions happen here.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace corrflow
