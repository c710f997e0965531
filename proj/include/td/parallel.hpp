#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace td {

// Worker cap from TD_THREADS (default 1 = fully sequential, which is the
// bit-reproducible reference mode). Parallel call sites are pure per index
// and write results by index, so outputs do not depend on the thread count.
inline size_t worker_count() {
    if (const char* env = std::getenv("TD_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && v <= 256) return static_cast<size_t>(v);
    }
    return 1;
}

inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<size_t> next{0};
    for (size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

}  // namespace td
