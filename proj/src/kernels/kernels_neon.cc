// NEON kernels for aarch64 (two doubles per register).

#include <arm_neon.h>

#include "lcp/kernels.h"

namespace lcp::kernels::detail {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double sum = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void accumulate_rows_neon(const double* coeffs, std::size_t nrows,
                          const double* rows, std::size_t stride, double* y,
                          std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    float64x2_t acc[4];
    for (int k = 0; k < 4; ++k) acc[k] = vld1q_f64(y + i + 2 * k);
    for (std::size_t r = 0; r < nrows; ++r) {
      const float64x2_t c = vdupq_n_f64(coeffs[r]);
      const double* row = rows + r * stride + i;
      for (int k = 0; k < 4; ++k) acc[k] = vfmaq_f64(acc[k], c, vld1q_f64(row + 2 * k));
    }
    for (int k = 0; k < 4; ++k) vst1q_f64(y + i + 2 * k, acc[k]);
  }
  for (; i < n; ++i) {
    double acc = y[i];
    for (std::size_t r = 0; r < nrows; ++r) acc += coeffs[r] * rows[r * stride + i];
    y[i] = acc;
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{dot_neon, axpy_neon, accumulate_rows_neon};
  return &table;
}

}  // namespace lcp::kernels::detail
