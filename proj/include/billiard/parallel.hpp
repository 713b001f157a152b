#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace billiard {

inline std::atomic<int>& thread_count_ref() {
    static std::atomic<int> n{0};  // 0: decide from hardware
    return n;
}

inline void set_threads(int n) { thread_count_ref().store(n); }

inline int effective_threads() {
    int n = thread_count_ref().load();
    if (n > 0) return n;
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

/// Run fn(chunk_index, begin, end) over fixed-size chunks of [0, n). The chunk
/// grid is independent of the worker count, so per-chunk results can be
/// combined in chunk order for bit-identical reductions.
inline void for_chunks(std::size_t n, std::size_t chunk,
                       const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    std::size_t n_chunks = (n + chunk - 1) / chunk;
    int workers = effective_threads();
    if (workers <= 1 || n_chunks == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c)
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) break;
            fn(c, c * chunk, std::min(n, (c + 1) * chunk));
        }
    };
    std::vector<std::thread> pool;
    int nw = static_cast<int>(std::min<std::size_t>(workers, n_chunks));
    pool.reserve(nw - 1);
    for (int i = 0; i < nw - 1; ++i) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
}

}  // namespace billiard
