#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dupless {

inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, n) partitioned into contiguous static chunks, one
/// per thread. The partition depends only on (n, threads), and every index is
/// owned by exactly one thread, so results are identical for any thread count
/// as long as fn(i) writes only to slot i.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (threads > n) threads = static_cast<unsigned>(n);

    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t begin = n * t / threads;
        const std::size_t end = n * (t + 1) / threads;
        pool.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dupless
