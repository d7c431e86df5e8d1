#include <cstdlib>
#include <string_view>

#include "tasked/kernels.hpp"

namespace tasked::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(TASKED_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* env = std::getenv("TASKED_SIMD"); env != nullptr && std::string_view(env) == "scalar")
    return detail::kScalarTable;
  if (const KernelTable* t = avx2_table()) return *t;
  return detail::kScalarTable;
}

}  // namespace

const KernelTable& scalar_table() { return detail::kScalarTable; }

const KernelTable* avx2_table() {
#if defined(TASKED_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &detail::kAvx2Table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace tasked::kernels
