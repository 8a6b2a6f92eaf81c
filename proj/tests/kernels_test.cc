#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lcp/engine.h"
#include "lcp/kernels.h"
#include "support/test_support.h"

namespace lcp {
namespace {

using kernels::Isa;

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<Isa> supported_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
    if (kernels::isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

double scale_of(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] * b[i]);
  return std::max(s, 1.0);
}

TEST(Kernels, ScalarIsAlwaysSupported) {
  EXPECT_TRUE(kernels::isa_supported(Isa::kScalar));
  EXPECT_EQ(kernels::isa_name(Isa::kScalar), "scalar");
}

TEST(Kernels, UnsupportedIsaIsRejected) {
  for (Isa isa : {Isa::kAvx2, Isa::kNeon}) {
    if (!kernels::isa_supported(isa)) { EXPECT_THROW(kernels::set_isa(isa), std::invalid_argument); }
  }
}

TEST(Kernels, ScopedIsaRestoresPrevious) {
  const Isa before = kernels::active_isa();
  {
    kernels::ScopedIsa scoped(Isa::kScalar);
    EXPECT_EQ(kernels::active_isa(), Isa::kScalar);
  }
  EXPECT_EQ(kernels::active_isa(), before);
}

TEST(Kernels, DotMatchesPlainLoop) {
  std::mt19937_64 rng(1);
  for (Isa isa : supported_isas()) {
    kernels::ScopedIsa scoped(isa);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 15u, 16u, 17u, 33u, 100u, 257u}) {
      const auto a = random_vector(n, rng), b = random_vector(n, rng);
      double expect = 0.0;
      for (std::size_t i = 0; i < n; ++i) expect += a[i] * b[i];
      EXPECT_NEAR(kernels::dot(a, b), expect, 1e-13 * scale_of(a, b))
          << kernels::isa_name(isa) << " n=" << n;
    }
  }
}

TEST(Kernels, AxpyMatchesPlainLoop) {
  std::mt19937_64 rng(2);
  for (Isa isa : supported_isas()) {
    kernels::ScopedIsa scoped(isa);
    for (std::size_t n : {0u, 1u, 5u, 8u, 13u, 64u, 99u}) {
      const auto x = random_vector(n, rng);
      auto y = random_vector(n, rng);
      auto expect = y;
      for (std::size_t i = 0; i < n; ++i) expect[i] += 0.37 * x[i];
      kernels::axpy(0.37, x, y);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y[i], expect[i], 1e-14) << kernels::isa_name(isa);
    }
  }
}

TEST(Kernels, AccumulateRowsMatchesPlainLoop) {
  std::mt19937_64 rng(3);
  for (Isa isa : supported_isas()) {
    kernels::ScopedIsa scoped(isa);
    for (std::size_t nrows : {0u, 1u, 2u, 9u}) {
      for (std::size_t n : {1u, 4u, 31u, 32u, 33u, 70u}) {
        const std::size_t stride = n + 3;
        const auto coeffs = random_vector(nrows, rng);
        const auto rows = random_vector(nrows * stride, rng);
        auto y = random_vector(n, rng);
        auto expect = y;
        for (std::size_t r = 0; r < nrows; ++r)
          for (std::size_t i = 0; i < n; ++i) expect[i] += coeffs[r] * rows[r * stride + i];
        kernels::accumulate_rows(coeffs, std::span<const double>(rows.data(), rows.size()), stride, y);
        for (std::size_t i = 0; i < n; ++i) {
          EXPECT_NEAR(y[i], expect[i], 1e-12) << kernels::isa_name(isa) << " rows=" << nrows;
        }
      }
    }
  }
}

TEST(Kernels, LengthMismatchThrows) {
  std::vector<double> a(3), b(4);
  EXPECT_THROW(kernels::dot(a, b), std::invalid_argument);
  EXPECT_THROW(kernels::axpy(1.0, a, b), std::invalid_argument);
}

TEST(Kernels, SimdVariantsAgreeWithScalarOnWholeNetworks) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const NetworkGraph g = testing::random_graph(rng);
    const Batch batch = testing::random_batch(g, 6, 100 + trial);
    double reference = 0.0;
    GradientSet ref_grads;
    {
      kernels::ScopedIsa scoped(Isa::kScalar);
      reference = forward_loss(g, batch);
      ref_grads = backward(g, batch).gradients;
    }
    for (Isa isa : supported_isas()) {
      kernels::ScopedIsa scoped(isa);
      EXPECT_NEAR(forward_loss(g, batch), reference, 1e-12) << kernels::isa_name(isa);
      const GradientSet grads = backward(g, batch).gradients;
      for (const auto& [key, t] : ref_grads) {
        for (std::size_t i = 0; i < t.size(); ++i) {
          EXPECT_NEAR(grads.at(key)[i], t[i], 1e-11) << key << " " << kernels::isa_name(isa);
        }
      }
    }
  }
}

}  // namespace
}  // namespace lcp
