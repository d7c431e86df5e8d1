// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// CPUID check.
#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "tasked/kernels.hpp"

namespace tasked::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sqdist_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

constexpr std::size_t kMr = 4;    // rows per micro-tile
constexpr std::size_t kNr = 8;    // columns per micro-tile (two ymm)
constexpr std::size_t kKc = 256;  // depth of a packed panel
constexpr std::size_t kMc = 64;   // rows of A kept packed at once

// packed: kMr-row micro-panels, each stored p-major (kc x kMr), zero padded.
void pack_a(const double* a, std::size_t lda, std::size_t rows, std::size_t kc, double* packed) {
  for (std::size_t r0 = 0; r0 < rows; r0 += kMr) {
    const std::size_t mr = std::min(kMr, rows - r0);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMr; ++r) packed[p * kMr + r] = r < mr ? a[(r0 + r) * lda + p] : 0.0;
    }
    packed += kc * kMr;
  }
}

// Full 4x8 tile: C[4 x 8] += Apanel * B[kc x 8].
inline void micro_full(std::size_t kc, const double* ap, const double* b, std::size_t ldb, double* c,
                       std::size_t ldc) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    const double* ar = ap + p * kMr;
    __m256d av = _mm256_broadcast_sd(ar);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(ar + 1);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(ar + 2);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(ar + 3);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  const __m256d acc[kMr][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}};
  for (std::size_t r = 0; r < kMr; ++r) {
    double* cr = c + r * ldc;
    _mm256_storeu_pd(cr, _mm256_add_pd(_mm256_loadu_pd(cr), acc[r][0]));
    _mm256_storeu_pd(cr + 4, _mm256_add_pd(_mm256_loadu_pd(cr + 4), acc[r][1]));
  }
}

// Ragged edge tile, mr <= 4 and nr <= 8.
inline void micro_edge(std::size_t kc, const double* ap, const double* b, std::size_t ldb, double* c,
                       std::size_t ldc, std::size_t mr, std::size_t nr) {
  double acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const double* br = b + p * ldb;
    for (std::size_t r = 0; r < kMr; ++r) {
      const double av = ap[p * kMr + r];
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] += av * br[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r)
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] += acc[r][j];
}

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;
  thread_local std::vector<double> packed;
  packed.resize(((kMc + kMr - 1) / kMr) * kMr * kKc);
  for (std::size_t pc = 0; pc < k; pc += kKc) {
    const std::size_t kc = std::min(kKc, k - pc);
    for (std::size_t ic = 0; ic < m; ic += kMc) {
      const std::size_t mc = std::min(kMc, m - ic);
      pack_a(a + ic * lda + pc, lda, mc, kc, packed.data());
      for (std::size_t jc = 0; jc < n; jc += kNr) {
        const std::size_t nr = std::min(kNr, n - jc);
        const double* bp = b + pc * ldb + jc;
        for (std::size_t ir = 0; ir < mc; ir += kMr) {
          const std::size_t mr = std::min(kMr, mc - ir);
          const double* ap = packed.data() + (ir / kMr) * kc * kMr;
          double* cp = c + (ic + ir) * ldc + jc;
          if (mr == kMr && nr == kNr)
            micro_full(kc, ap, bp, ldb, cp, ldc);
          else
            micro_edge(kc, ap, bp, ldb, cp, ldc, mr, nr);
        }
      }
    }
  }
}

}  // namespace

namespace detail {
const KernelTable kAvx2Table{"avx2", dot_avx2, axpy_avx2, sqdist_avx2, sum_avx2, gemm_avx2};
}

}  // namespace tasked::kernels
