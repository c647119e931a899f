#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fedcast {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write results
// into per-index slots, so the outcome does not depend on scheduling. The
// first exception (lowest index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    if (n == 0) return;
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) pool.emplace_back(work);
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace fedcast
