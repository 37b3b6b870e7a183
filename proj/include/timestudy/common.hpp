// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ts {

// Malformed inputs, bad files, unknown labels. CLI maps this to exit code 3.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf gradients, diverged optimization. CLI maps this to exit code 4.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline int& thread_count() {
    static int n = static_cast<int>(std::thread::hardware_concurrency());
    return n;
}

// Static chunking so results do not depend on the number of worker threads.
// fn(begin, end) must only write state owned by its [begin, end) range.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    int workers = thread_count();
    if (workers <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::size_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        std::size_t begin = c * per;
        std::size_t end = std::min(n, begin + per);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace ts
