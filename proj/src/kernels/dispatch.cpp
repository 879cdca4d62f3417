#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#include "tables.hpp"

namespace attnsqueeze::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(ATTNSQUEEZE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* find_table(std::string_view name) {
  for (const KernelTable* table : available_tables()) {
    if (table->name == name) return table;
  }
  return nullptr;
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ATTNSQUEEZE_SIMD"); env != nullptr && *env != '\0') {
    if (const KernelTable* table = find_table(env)) return table;
  }
  return available_tables().back();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> tables{&scalar_table()};
#if defined(ATTNSQUEEZE_HAVE_AVX2)
  if (cpu_has_avx2()) tables.push_back(&avx2_table());
#endif
#if defined(ATTNSQUEEZE_HAVE_NEON)
  tables.push_back(&neon_table());
#endif
  return tables;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

bool select(std::string_view name) {
  const KernelTable* table = find_table(name);
  if (table == nullptr) return false;
  current().store(table, std::memory_order_release);
  return true;
}

float float_cut(double threshold) noexcept {
  float cut = static_cast<float>(threshold);
  if (static_cast<double>(cut) < threshold) cut = std::nextafter(cut, INFINITY);
  return cut;
}

}  // namespace attnsqueeze::kernels
