// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma
// and is only entered after the dispatcher has checked CPU support.

#include <immintrin.h>

#include "lcp/kernels.h"

namespace lcp::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8),
                           _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12),
                           _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double sum = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1),
                                  _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Column blocks of 32 keep eight independent FMA chains in flight.
void accumulate_rows_avx2(const double* coeffs, std::size_t nrows,
                          const double* rows, std::size_t stride, double* y,
                          std::size_t n) {
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    __m256d acc[8];
    for (int k = 0; k < 8; ++k) acc[k] = _mm256_loadu_pd(y + i + 4 * k);
    for (std::size_t r = 0; r < nrows; ++r) {
      const __m256d c = _mm256_set1_pd(coeffs[r]);
      const double* row = rows + r * stride + i;
      for (int k = 0; k < 8; ++k) {
        acc[k] = _mm256_fmadd_pd(c, _mm256_loadu_pd(row + 4 * k), acc[k]);
      }
    }
    for (int k = 0; k < 8; ++k) _mm256_storeu_pd(y + i + 4 * k, acc[k]);
  }
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    for (std::size_t r = 0; r < nrows; ++r) {
      acc = _mm256_fmadd_pd(_mm256_set1_pd(coeffs[r]),
                            _mm256_loadu_pd(rows + r * stride + i), acc);
    }
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) {
    double acc = y[i];
    for (std::size_t r = 0; r < nrows; ++r) acc += coeffs[r] * rows[r * stride + i];
    y[i] = acc;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{dot_avx2, axpy_avx2, accumulate_rows_avx2};
  return &table;
}

}  // namespace lcp::kernels::detail
