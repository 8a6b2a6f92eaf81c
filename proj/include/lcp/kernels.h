#pragma once
// Inner-loop arithmetic for the inference engine.
//
// Every kernel has a scalar reference implementation plus optional SIMD
// variants (AVX2+FMA on x86-64, NEON on aarch64). The variant is picked once
// at startup from the CPU's capabilities; LCP_ISA=scalar|avx2|neon in the
// environment or set_isa() overrides it. SIMD variants reorder floating-point
// sums, so they agree with the scalar path to rounding, not bitwise.

#include <cstddef>
#include <span>
#include <string_view>

namespace lcp::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

// Currently active variant.
Isa active_isa();

// Throws std::invalid_argument if the variant is not available on this CPU.
void set_isa(Isa isa);

// Sum of a[i] * b[i]. Spans must have equal length.
double dot(std::span<const double> a, std::span<const double> b);

// y[i] += alpha * x[i].
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// y[i] += sum_r coeffs[r] * rows[r * stride + i] for i < y.size().
// This is one output row of a row-major matrix product.
void accumulate_rows(std::span<const double> coeffs,
                     std::span<const double> rows, std::size_t stride,
                     std::span<double> y);

// Scoped override used by equivalence tests.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
  ~ScopedIsa() { set_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

namespace detail {

// Raw-pointer signatures shared by all variants.
struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  void (*accumulate_rows)(const double* coeffs, std::size_t nrows,
                          const double* rows, std::size_t stride, double* y,
                          std::size_t n);
};

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();  // nullptr when not compiled in

}  // namespace detail
}  // namespace lcp::kernels
