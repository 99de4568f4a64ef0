#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mvjl {

inline std::size_t resolve_threads(std::size_t requested) noexcept {
    if (requested != 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<std::size_t>(hc);
}

/// Runs fn(begin, end, chunk_index) over [0, n) split into contiguous chunks.
/// Chunk boundaries depend only on (n, threads), so per-chunk outputs merged
/// in chunk order are independent of scheduling. The first exception thrown
/// by any worker is rethrown on the calling thread.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::min(resolve_threads(threads), std::max<std::size_t>(n, 1));
    if (n == 0) return;
    if (threads <= 1) {
        fn(std::size_t{0}, n, std::size_t{0});
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    pool.reserve(threads - 1);
    for (std::size_t t = 1; t < threads; ++t) {
        const std::size_t begin = std::min(t * chunk, n);
        const std::size_t end = std::min(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end, t] {
            try {
                fn(begin, end, t);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    try {
        fn(std::size_t{0}, std::min(chunk, n), std::size_t{0});
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace mvjl
