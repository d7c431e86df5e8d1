#pragma once

// Dense double-precision inner loops used by the network, the losses and the
// MMD regulariser. Every kernel has a portable scalar reference and, on x86-64,
// an AVX2+FMA variant. The active table is chosen once at runtime from CPUID;
// TASKED_SIMD=scalar in the environment forces the reference path.

#include <cstddef>
#include <string_view>

namespace tasked::kernels {

using DotFn = double (*)(const double* a, const double* b, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
using SqDistFn = double (*)(const double* a, const double* b, std::size_t n);
using SumFn = double (*)(const double* a, std::size_t n);
// C[m x n] = (accumulate ? C : 0) + A[m x k] * B[k x n], all row-major.
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                        const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

struct KernelTable {
  std::string_view name;
  DotFn dot;
  AxpyFn axpy;
  SqDistFn sqdist;
  SumFn sum;
  GemmFn gemm;
};

const KernelTable& scalar_table();

// nullptr when the binary or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

// Table used by the rest of the library.
const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline double sqdist(const double* a, const double* b, std::size_t n) { return active().sqdist(a, b, n); }
inline double sum(const double* a, std::size_t n) { return active().sum(a, n); }
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  active().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

namespace detail {
extern const KernelTable kScalarTable;
#if defined(TASKED_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
}  // namespace detail

}  // namespace tasked::kernels
