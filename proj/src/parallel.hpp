#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace escm::detail {

// Runs fn(0..n-1) on up to `threads` workers with a static strided split. Results must be
// written by index; the exception of the lowest failing index is rethrown.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
  std::vector<std::exception_ptr> errors(std::size_t(std::max(n, 0)));
  auto work = [&](int w, int stride) {
    for (int i = w; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[std::size_t(i)] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(threads, 1, std::max(n, 1));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace escm::detail
