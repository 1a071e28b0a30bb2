// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace npva {

int worker_count() {
    if (const char* env = std::getenv("NPVA_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) {
                return n;
            }
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(int, std::size_t, std::size_t)>& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n < 2) {
        fn(0, 0, n);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::exception_ptr> errors(threads);
    auto guarded = [&](int t, std::size_t b, std::size_t e) {
        try {
            fn(t, b, e);
        } catch (...) {
            errors[t] = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) {
        const std::size_t b = std::min(n, chunk * t);
        const std::size_t e = std::min(n, b + chunk);
        pool.emplace_back(guarded, t, b, e);
    }
    guarded(0, 0, std::min(n, chunk));
    for (auto& th : pool) {
        th.join();
    }
    for (auto& err : errors) {
        if (err) {
            std::rethrow_exception(err);
        }
    }
}

} // namespace npva
