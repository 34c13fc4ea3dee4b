#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace vitas {

inline std::size_t default_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<std::size_t>(hc);
}

// Contiguous-chunk parallel for. Worker i handles [i*chunk, min(n,(i+1)*chunk)),
// so shard assignment (and any per-shard accumulation order) is deterministic.
inline void parallel_shards(std::size_t n, std::size_t shards,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    shards = std::max<std::size_t>(1, std::min(shards, n == 0 ? 1 : n));
    if (shards == 1) {
        fn(0, 0, n);
        return;
    }
    std::size_t chunk = (n + shards - 1) / shards;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < shards; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, t, lo, hi] { fn(t, lo, hi); });
    }
    for (auto& th : pool) th.join();
}

inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n == 0 ? 1 : n));
    if (threads == 1) {
        fn(0, n);
        return;
    }
    std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

} // namespace vitas
