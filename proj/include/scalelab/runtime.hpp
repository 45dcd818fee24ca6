#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace scalelab {

namespace detail {

inline int read_thread_env() {
    const char* env = std::getenv("SCALELAB_THREADS");
    if (env == nullptr) return 1;
    int n = std::atoi(env);
    return std::clamp(n, 1, 256);
}

inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{read_thread_env()};
    return cap;
}

}  // namespace detail

// Parallelism cap, taken from SCALELAB_THREADS at startup (default 1 so that
// runs are bitwise reproducible without any configuration).
inline int max_threads() { return detail::thread_cap().load(std::memory_order_relaxed); }

inline void set_max_threads(int n) {
    detail::thread_cap().store(std::clamp(n, 1, 256), std::memory_order_relaxed);
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunking is a pure
// function of (n, thread cap), so results that depend only on per-index work
// are identical for a fixed configuration.
template <typename Fn>
void parallel_chunks(std::int64_t n, Fn&& fn) {
    const int threads = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
    if (threads <= 1) {
        fn(std::int64_t{0}, n);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(threads));
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) break;
        workers.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace scalelab
