#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

#include "ogrg/ops.hpp"

namespace ogrg {

namespace {
std::atomic<int> g_threads{0};

int detect_threads() {
    if (const char* env = std::getenv("OGRG_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}
}  // namespace

int worker_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = detect_threads();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_worker_threads(int n) { g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

// Splits [0, n) into contiguous chunks, one per worker. Each chunk writes a
// disjoint output range with a fixed per-element reduction order, so results
// are bit-identical at any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    const int workers = worker_threads();
    if (workers <= 1 || n < 2) {
        body(0, n);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(chunks - 1);
    const std::size_t step = (n + chunks - 1) / chunks;
    for (std::size_t c = 1; c < chunks; ++c) {
        const std::size_t lo = c * step;
        if (lo >= n) break;
        pool.emplace_back(body, lo, std::min(n, lo + step));
    }
    body(0, std::min(n, step));
    for (auto& t : pool) t.join();
}

}  // namespace ogrg
