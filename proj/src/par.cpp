#include "kdl/par.hpp"

#include <stdexcept>

namespace kdl::par {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = hardware_concurrency
}

int max_threads() {
  int n = g_max_threads.load();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

void set_max_threads(int n) { g_max_threads.store(n); }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body,
                  std::int64_t grain) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  const int workers = static_cast<int>(
      std::min<std::int64_t>(max_threads(), (n + grain - 1) / grain));
  if (workers <= 1) {
    for (std::int64_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::atomic<std::int64_t> next{begin};
  std::exception_ptr eptr;
  std::atomic<bool> failed{false};
  auto run = [&]() {
    for (;;) {
      const std::int64_t lo = next.fetch_add(grain);
      if (lo >= end || failed.load()) return;
      const std::int64_t hi = std::min(end, lo + grain);
      try {
        for (std::int64_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        if (!failed.exchange(true)) eptr = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (failed.load() && eptr) std::rethrow_exception(eptr);
}

}  // namespace kdl::par
