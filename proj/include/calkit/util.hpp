#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace calkit {

// FNV-1a, 64 bit. Stable across platforms; used for seeds and cache keys.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

std::string read_file(const std::string& path);
std::string to_lower_ascii(std::string_view text);
std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

// Sum with O(log n) error growth; result independent of thread count.
double pairwise_sum(std::span<const double> values);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// thrown by any task is rethrown after all workers have joined.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(jobs, n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace calkit
