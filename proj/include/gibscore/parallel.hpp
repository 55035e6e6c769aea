#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gibscore {

inline unsigned default_jobs() noexcept
{
  return std::max(1u, std::thread::hardware_concurrency());
}

//! Calls body(i) for i in [0, n) on up to `jobs` threads, in contiguous
//! blocks. body must only write to state owned by index i; callers that need
//! a reduction do it afterwards in index order, so results never depend on
//! the thread count. The first exception thrown by any body is rethrown.
template<typename Body>
void parallel_for(std::size_t n, unsigned jobs, Body&& body)
{
  const std::size_t workers = std::min<std::size_t>(std::max(1u, jobs), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      body(i);
    }
    return;
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * block;
    const std::size_t end = std::min(n, begin + block);
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) {
          body(i);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

} // namespace gibscore
