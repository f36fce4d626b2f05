// Transcendental kernels. This file is compiled with -ffast-math so the
// loops below call the SIMD exp/erf from libmvec; keep it free of anything
// that relies on strict IEEE semantics (NaN checks happen in the callers).
#include "gpvit/kernels.hpp"

#include <cmath>
#include <cstdint>

namespace gpvit::kernels::parallel {

namespace {
constexpr std::size_t kParallelWork = 1u << 15;
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double tau,
                  std::span<double> y) {
  const double* xp = x.data();
  double* yp = y.data();
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows); ++r) {
    const double* in = xp + r * cols;
    double* out = yp + r * cols;
    double mx = in[0];
    for (std::size_t j = 1; j < cols; ++j) mx = in[j] > mx ? in[j] : mx;
#pragma omp simd
    for (std::size_t j = 0; j < cols; ++j) out[j] = exp((in[j] - mx) / tau);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += out[j];
    for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
  }
}

void gelu(std::span<const double> x, std::span<double> y, std::span<double> dydx) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  const double* xp = x.data();
  double* yp = y.data();
  double* dp = dydx.data();
  const auto n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for simd schedule(static) if (x.size() >= kParallelWork)
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = xp[i];
    const double cdf = 0.5 * (1.0 + erf(v * inv_sqrt2));
    yp[i] = v * cdf;
    dp[i] = cdf + v * exp(-0.5 * v * v) * inv_sqrt_2pi;
  }
}

}  // namespace gpvit::kernels::parallel
