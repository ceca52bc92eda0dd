#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace starnet {

// Runs fn(begin, end) over contiguous blocks of [0, n). Results must be
// written to disjoint, index-addressed slots; there is no reduction here,
// so output is identical for any worker count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    if (workers > n) workers = n;
    const std::size_t base = n / workers;
    const std::size_t extra = n % workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t begin = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t len = base + (w < extra ? 1 : 0);
        const std::size_t end = begin + len;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
        begin = end;
    }
    for (auto& t : pool) t.join();
}

} // namespace starnet
