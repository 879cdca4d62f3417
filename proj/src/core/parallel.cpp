#include "attnsqueeze/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace attnsqueeze {
namespace {

std::size_t threads_from_env() noexcept {
  const char* env = std::getenv("ATTNSQUEEZE_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const unsigned long long n = std::strtoull(env, &end, 10);
  return (end != nullptr && *end == '\0') ? static_cast<std::size_t>(n) : 0;
}

std::atomic<std::size_t>& thread_cap() {
  static std::atomic<std::size_t> cap{threads_from_env()};
  return cap;
}

}  // namespace

std::size_t max_threads() noexcept {
  const std::size_t cap = thread_cap().load();
  if (cap != 0) return cap;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void set_max_threads(std::size_t threads) noexcept { thread_cap().store(threads); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  const std::size_t workers = std::min(count, max_threads());
  std::vector<std::exception_ptr> errors(count);
  auto run = [&](std::size_t index) {
    try {
      fn(index);
    } catch (...) {
      errors[index] = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) run(i);
      });
    }
  }
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

}  // namespace attnsqueeze
