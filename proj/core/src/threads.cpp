// SPDX-License-Identifier: MIT
#include "unilm/threads.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace unilm {

namespace {

int default_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return static_cast<int>(std::min(hw, 8u));
}

std::atomic<int> g_num_threads{default_threads()};

} // namespace

void set_num_threads(int n) { g_num_threads.store(std::max(1, n)); }

int num_threads() { return g_num_threads.load(); }

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn) {
    if (begin >= end) return;
    std::size_t range = end - begin;
    std::size_t workers = static_cast<std::size_t>(num_threads());
    if (workers <= 1 || range < 2) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    workers = std::min(workers, range);
    std::size_t chunk = (range + workers - 1) / workers;

    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto run_chunk = [&](std::size_t lo, std::size_t hi) {
        try {
            for (std::size_t i = lo; i < hi && !failed.load(std::memory_order_relaxed); ++i) fn(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) first_error = std::current_exception();
            failed.store(true, std::memory_order_relaxed);
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        std::size_t lo = begin + w * chunk;
        std::size_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(run_chunk, lo, hi);
    }
    run_chunk(begin, std::min(end, begin + chunk));
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace unilm
