#include "gpvit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gpvit::kernels::serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void batched_gemm_nn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  for (std::size_t g = 0; g < groups; ++g)
    gemm_nn(m, n, k, a.subspan(g * m * k, m * k), b.subspan(g * k * n, k * n),
            c.subspan(g * m * n, m * n));
}

void batched_gemm_nt(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  for (std::size_t g = 0; g < groups; ++g)
    gemm_nt(m, n, k, a.subspan(g * m * k, m * k), b.subspan(g * n * k, n * k),
            c.subspan(g * m * n, m * n));
}

void batched_gemm_tn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  for (std::size_t g = 0; g < groups; ++g)
    gemm_tn(m, n, k, a.subspan(g * k * m, k * m), b.subspan(g * k * n, k * n),
            c.subspan(g * m * n, m * n));
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double tau,
                  std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* out = y.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] = std::exp((in[j] - mx) / tau);
      total += out[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
  }
}

void gelu(std::span<const double> x, std::span<double> y, std::span<double> dydx) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    y[i] = v * cdf;
    dydx[i] = cdf + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi;
  }
}

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> mean, std::span<double> rstd) {
  const double inv_n = 1.0 / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* out = y.data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += in[j];
    mu *= inv_n;
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
    var *= inv_n;
    const double rs = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) out[j] = (in[j] - mu) * rs * gamma[j] + beta[j];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

}  // namespace gpvit::kernels::serial
