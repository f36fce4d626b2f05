#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels behind the tensor ops.
//
// `serial` is the plain reference used by the tests; `parallel` is the
// OpenMP version the tape actually runs. Work is split across threads by
// output rows only, so a result never depends on the thread count. The
// parallel softmax and GELU use the vectorized libm and agree with the
// reference to a few ulp rather than bitwise.
namespace gpvit::kernels {

namespace serial {

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// c[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// c[m×n] += a[k×m]ᵀ · b[k×n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

// Same three products over `groups` contiguous matrices.
void batched_gemm_nn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);
void batched_gemm_nt(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);
void batched_gemm_tn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);

/// y = softmax((x - rowmax) / tau) per row.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double tau,
                  std::span<double> y);

/// y = x·Φ(x) with Φ the standard normal CDF; dydx receives Φ(x) + x·φ(x).
void gelu(std::span<const double> x, std::span<double> y, std::span<double> dydx);

/// Normalizes each row; writes the per-row mean and 1/sqrt(var+eps) for the
/// backward pass.
void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> mean, std::span<double> rstd);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

void batched_gemm_nn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);
void batched_gemm_nt(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);
void batched_gemm_tn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double tau,
                  std::span<double> y);

void gelu(std::span<const double> x, std::span<double> y, std::span<double> dydx);

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> mean, std::span<double> rstd);

}  // namespace parallel

}  // namespace gpvit::kernels
