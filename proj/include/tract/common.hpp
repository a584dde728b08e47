#pragma once

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tract {

// Contract violations (bad shapes, broken preconditions) are programming
// errors; data problems and numeric failures get their own types so callers
// can map them to distinct exit codes.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct GeometryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline int& requested_threads() {
  static int requested = 0;  // 0 = use hardware concurrency
  return requested;
}
}  // namespace detail

// Effective parallelism: the requested count (default: hardware threads),
// capped by the TRACT_THREADS environment variable when set.
inline int effective_threads() {
  int want = detail::requested_threads();
  if (want <= 0) {
    want = static_cast<int>(std::thread::hardware_concurrency());
    if (want <= 0) want = 1;
  }
  if (const char* env = std::getenv("TRACT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) want = std::min(want, cap);
  }
  return want;
}

inline void set_max_threads(int n) { detail::requested_threads() = n; }

// Splits [0, total) into contiguous chunks, one worker per chunk. Every
// element is produced by exactly one worker with a fixed inner loop order,
// so results are identical for any thread count.
template <class Fn>
void parallel_for(int total, long long work_per_item, Fn&& body) {
  const int threads = effective_threads();
  const long long total_work = static_cast<long long>(total) * work_per_item;
  // Not worth a thread launch below ~2M flops.
  if (threads <= 1 || total < 2 || total_work < (1LL << 21)) {
    body(0, total);
    return;
  }
  const int n_workers = std::min(threads, total);
  const int chunk = (total + n_workers - 1) / n_workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_workers) - 1);
  for (int t = 1; t < n_workers; ++t) {
    const int begin = t * chunk;
    const int end = std::min(total, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(total, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace tract
