// Deterministic data parallelism: index-sharded loops plus fixed-order
// reductions, so results never depend on the thread count.
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace rnnfilter {

// Worker count used when parallel_for is called with num_threads = 0.
// Resolution order: set_max_threads() value, RNNFILTER_THREADS env var,
// hardware concurrency.
int default_thread_count();
void set_max_threads(int n); // 0 restores automatic selection

// Runs fn(i) for every i in [0, n). fn must confine its writes to slot i of
// preallocated output storage; under that discipline the result is identical
// for any thread count. The first exception thrown by any index is rethrown.
void parallel_for(int n, const std::function<void(int)>& fn, int num_threads = 0);

// In-place pairwise reduction with a combining order fixed by index, not by
// scheduling: items[0] ends up holding combine(...) over all items.
template <class T, class Combine>
void tree_reduce_in_place(std::vector<T>& items, Combine&& combine) {
    for (std::size_t gap = 1; gap < items.size(); gap *= 2) {
        for (std::size_t i = 0; i + gap < items.size(); i += 2 * gap) {
            combine(items[i], items[i + gap]);
        }
    }
}

} // namespace rnnfilter
