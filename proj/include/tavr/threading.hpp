#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace tavr {

// Worker count: TAVR_THREADS if set, else hardware concurrency, min 1.
inline int worker_count() {
    if (const char* env = std::getenv("TAVR_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs f(i) for i in [0, n). Results must only be written to per-index slots;
// the partition of indices over workers is static, so output is independent
// of the worker count.
template <typename F>
void parallel_for(size_t n, F&& f) {
    int workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) f(i);
        return;
    }
    size_t w = std::min<size_t>(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (size_t t = 0; t < w; ++t) {
        pool.emplace_back([t, w, n, &f] {
            for (size_t i = t; i < n; i += w) f(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace tavr
