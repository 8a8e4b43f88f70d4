#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace eqfree {

/// Worker count: EQFREE_THREADS if set and positive, else hardware concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("EQFREE_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Runs fn(chunk_begin, chunk_end, chunk_index) over [0, n) split into chunks of
/// a fixed size. Chunking does not depend on the thread count, so callers that
/// reduce per-chunk results in chunk order get bit-identical output.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunk, Fn&& fn) {
  if (n == 0) return;
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), nchunks);
  auto run = [&](std::size_t c) { fn(c * chunk, std::min(n, (c + 1) * chunk), c); };
  if (workers <= 1) {
    for (std::size_t c = 0; c < nchunks; ++c) run(c);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t c = t; c < nchunks; c += workers) {
        try {
          run(c);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Number of chunks parallel_chunks will use for (n, chunk).
inline std::size_t chunk_count(std::size_t n, std::size_t chunk) {
  chunk = std::max<std::size_t>(chunk, 1);
  return (n + chunk - 1) / chunk;
}

}  // namespace eqfree
