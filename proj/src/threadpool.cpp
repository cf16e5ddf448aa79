#include "vncseg/threadpool.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vncseg {

namespace {

int initial_worker_count() {
  if (const char* env = std::getenv("VNCSEG_THREADS")) {
    int n = std::atoi(env);
    if (n < 1)
      throw std::runtime_error("VNCSEG_THREADS must be a positive integer, got '" +
                               std::string(env) + "'");
    return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

int g_workers = 0;
thread_local bool t_inside_parallel = false;

}  // namespace

int worker_count() {
  if (g_workers == 0) g_workers = initial_worker_count();
  return g_workers;
}

void set_worker_count(int n) {
  if (n < 1) throw std::runtime_error("worker count must be positive");
  g_workers = n;
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  std::int64_t total = end - begin;
  if (total <= 0) return;

  int nw = worker_count();
  if (nw > total) nw = static_cast<int>(total);
  // Nested calls run serially; the outer loop already owns the workers.
  if (nw == 1 || t_inside_parallel) {
    fn(begin, end);
    return;
  }

  std::int64_t chunk = total / nw;
  std::int64_t rem = total % nw;
  std::vector<std::thread> threads;
  threads.reserve(nw - 1);
  std::int64_t lo = begin;
  for (int w = 0; w < nw; ++w) {
    std::int64_t hi = lo + chunk + (w < rem ? 1 : 0);
    if (w + 1 == nw) {
      t_inside_parallel = true;
      fn(lo, hi);
      t_inside_parallel = false;
    } else {
      threads.emplace_back([&fn, lo, hi] {
        t_inside_parallel = true;
        fn(lo, hi);
      });
    }
    lo = hi;
  }
  for (auto& t : threads) t.join();
}

}  // namespace vncseg
