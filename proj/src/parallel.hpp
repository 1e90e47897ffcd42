#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace cylwalk::detail {

// Deterministic chunked parallel loop: body(i) must only touch state owned
// by index i. The first captured exception is rethrown on the caller.
template <typename Fn>
void parallel_for(long n, int workers, Fn&& body) {
    if (n <= 0) return;
    const long t = std::max(1L, std::min(static_cast<long>(workers), n));
    if (t == 1) {
        for (long i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(t));
    const long chunk = (n + t - 1) / t;
    for (long w = 0; w < t; ++w) {
        pool.emplace_back([&, w]() {
            try {
                const long lo = w * chunk;
                const long hi = std::min(n, lo + chunk);
                for (long i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errs[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}
