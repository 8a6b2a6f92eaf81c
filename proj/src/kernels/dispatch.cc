#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "lcp/kernels.h"

namespace lcp::kernels {
namespace detail {

#ifndef LCP_HAVE_AVX2_TU
const KernelTable* avx2_table() { return nullptr; }
#endif
#ifndef LCP_HAVE_NEON_TU
const KernelTable* neon_table() { return nullptr; }
#endif

}  // namespace detail

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const detail::KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &detail::scalar_table();
    case Isa::kAvx2:
      return cpu_has_avx2() ? detail::avx2_table() : nullptr;
    case Isa::kNeon:
      return detail::neon_table();
  }
  return nullptr;
}

Isa detect_isa() {
  if (const char* env = std::getenv("LCP_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::kScalar;
    if (want == "avx2" && table_for(Isa::kAvx2)) return Isa::kAvx2;
    if (want == "neon" && table_for(Isa::kNeon)) return Isa::kNeon;
  }
  if (table_for(Isa::kAvx2)) return Isa::kAvx2;
  if (table_for(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

struct State {
  std::atomic<Isa> isa{detect_isa()};
  std::atomic<const detail::KernelTable*> table{table_for(isa.load())};
};

State& state() {
  static State s;
  return s;
}

const detail::KernelTable& table() { return *state().table.load(std::memory_order_relaxed); }

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) { return table_for(isa) != nullptr; }

Isa active_isa() { return state().isa.load(); }

void set_isa(Isa isa) {
  const detail::KernelTable* t = table_for(isa);
  if (t == nullptr) {
    throw std::invalid_argument("kernel variant not available: " +
                                std::string(isa_name(isa)));
  }
  state().isa.store(isa);
  state().table.store(t);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  return table().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  table().axpy(alpha, x.data(), y.data(), x.size());
}

void accumulate_rows(std::span<const double> coeffs,
                     std::span<const double> rows, std::size_t stride,
                     std::span<double> y) {
  if (!coeffs.empty() && (stride < y.size() ||
                          rows.size() < (coeffs.size() - 1) * stride + y.size())) {
    throw std::invalid_argument("accumulate_rows: rows span too short");
  }
  table().accumulate_rows(coeffs.data(), coeffs.size(), rows.data(), stride,
                          y.data(), y.size());
}

}  // namespace lcp::kernels
