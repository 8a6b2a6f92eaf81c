// Scalar reference kernels. These define the semantics every SIMD variant
// is tested against.

#include "lcp/kernels.h"

namespace lcp::kernels::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void accumulate_rows_scalar(const double* coeffs, std::size_t nrows,
                            const double* rows, std::size_t stride, double* y,
                            std::size_t n) {
  for (std::size_t r = 0; r < nrows; ++r) {
    const double c = coeffs[r];
    const double* row = rows + r * stride;
    for (std::size_t i = 0; i < n; ++i) y[i] += c * row[i];
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{dot_scalar, axpy_scalar,
                                 accumulate_rows_scalar};
  return table;
}

}  // namespace lcp::kernels::detail
