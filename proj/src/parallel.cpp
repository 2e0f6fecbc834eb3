#include "gwnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace gwnet {
namespace {

int read_env_limit() {
  const char* v = std::getenv("GWNET_THREADS");
  if (!v) return 1;
  int n = std::atoi(v);
  return n >= 1 ? n : 1;
}

std::atomic<int> g_limit{read_env_limit()};

}  // namespace

int thread_limit() { return g_limit.load(); }
void set_thread_limit(int n) { g_limit.store(std::max(1, n)); }

void parallel_for(int count, const std::function<void(int)>& body) {
  int workers = std::min(thread_limit(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < count; i += workers) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace gwnet
