#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "opesel/types.hpp"

namespace opesel {

// Runs fn(0..total-1) over `jobs` workers claiming indices from a shared
// counter; any worker's failure stops the pool and is rethrown after the
// join.  Tasks must write to disjoint outputs so the result is identical for
// every job count.
inline void run_tasks(Index total, int jobs,
                      const std::function<void(Index)>& fn) {
  jobs = std::clamp<Index>(jobs, 1, total);
  if (jobs <= 1) {
    for (Index t = 0; t < total; ++t) fn(t);
    return;
  }
  std::atomic<Index> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr err;
  std::mutex err_mu;
  auto body = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const Index t = next.fetch_add(1, std::memory_order_relaxed);
      if (t >= total) break;
      try {
        fn(t);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (Index w = 0; w < jobs; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace opesel
