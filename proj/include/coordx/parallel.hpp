#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace coordx {

namespace detail {

inline int default_thread_count() {
    int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("COORDX_THREADS")) {
        try {
            int cap = std::stoi(env);
            if (cap >= 1) return std::min(hw, cap);
        } catch (...) {
        }
    }
    return hw;
}

inline int& thread_count_ref() {
    static int count = default_thread_count();
    return count;
}

}  // namespace detail

inline int num_threads() { return detail::thread_count_ref(); }

inline void set_num_threads(int n) { detail::thread_count_ref() = std::max(1, n); }

/// Restores the previous thread count on scope exit.
class ScopedThreadCount {
public:
    explicit ScopedThreadCount(int n) : saved_(num_threads()) { set_num_threads(n); }
    ~ScopedThreadCount() { set_num_threads(saved_); }
    ScopedThreadCount(const ScopedThreadCount&) = delete;
    ScopedThreadCount& operator=(const ScopedThreadCount&) = delete;

private:
    int saved_;
};

/// Splits [0, n) into contiguous chunks, one per worker. Each index is
/// handled by exactly one call so per-element results do not depend on
/// the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t min_chunk, Fn&& fn) {
    std::size_t workers = static_cast<std::size_t>(num_threads());
    if (min_chunk == 0) min_chunk = 1;
    workers = std::min(workers, (n + min_chunk - 1) / min_chunk);
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers - 1);
    std::size_t step = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        std::size_t begin = w * step;
        std::size_t end = std::min(n, begin + step);
        if (begin >= end) break;
        pool.emplace_back([&fn, &errors, w, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    try {
        fn(std::size_t{0}, std::min(n, step));
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace coordx
