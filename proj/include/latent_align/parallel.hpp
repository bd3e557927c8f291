#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace latent_align {

// Runs fn(i) for i in [0, count) on up to `workers` threads. Once an item fails no new items
// start; after all threads join, the failure with the lowest index is rethrown.
template <typename F>
void parallel_for(size_t count, int workers, F && fn) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<bool> failed{false};
    auto run = [&](size_t i) {
        if (failed.load()) return;
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
            failed.store(true);
        }
    };
    const size_t nthreads = std::min<size_t>(count, static_cast<size_t>(std::max(1, workers)));
    if (nthreads <= 1) {
        for (size_t i = 0; i < count; ++i) run(i);
    } else {
        std::vector<std::thread> threads;
        for (size_t t = 0; t < nthreads; ++t) {
            threads.emplace_back([&, t] {
                for (size_t i = t; i < count; i += nthreads) run(i);
            });
        }
        for (auto & th : threads) th.join();
    }
    for (auto & e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace latent_align
