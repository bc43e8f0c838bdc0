#include "corrflow/parallel.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace corrflow {

namespace {
std::atomic<int> g_threads{1};
}

void set_thread_count(int n) { g_threads.store(n < 1 ? 1 : n); }
int thread_count() { return g_threads.load(); }

void parallel_for(int n, const std::function<void(int)>& fn) {
    int t = g_threads.load();
    if (t <= 1 || n < 2 * t) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    // Contiguous static blocks; indices are processed in the same order
    // within a block regardless of how many workers run them.
    int blocks = t;
    int per = (n + blocks - 1) / blocks;
    std::vector<std::thread> pool;
    pool.reserve(blocks - 1);
    auto run_block = [&](int b) {
        int lo = b * per;
        int hi = lo + per < n ? lo + per : n;
        for (int i = lo; i < hi; ++i) fn(i);
    };
    for (int b = 1; b < blocks; ++b) pool.emplace_back(run_block, b);
    run_block(0);
    for (auto& th : pool) th.join();
}

}  // namespace corrflow
