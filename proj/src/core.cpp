#include "gpmm/core.hpp"

#include <algorithm>
#include <atomic>

namespace gpmm {

namespace {
std::atomic<unsigned> g_threads{0};
}

void set_thread_count(unsigned n) { g_threads.store(n); }

unsigned thread_count() {
    unsigned n = g_threads.load();
    if (n == 0) {
        n = std::thread::hardware_concurrency();
        if (n == 0) n = 1;
    }
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& range_fn) {
    const unsigned workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1 || n == 0) {
        if (n > 0) range_fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] { range_fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

VectorXd standard_normal(int r, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd v(r);
    for (int i = 0; i < r; ++i) v[i] = normal(rng);
    return v;
}

}  // namespace gpmm
