#include "gpvit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace gpvit::kernels::parallel {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

inline std::int64_t sz(std::size_t v) { return static_cast<std::int64_t>(v); }

// c[m×n] += A·b with A(i, p) = a[i·ai + p·ap], so one routine covers a
// and aᵀ. Blocks of MR rows × NR columns stay in registers for the whole
// reduction; each element still accumulates over p in order.
constexpr std::size_t kNR = 8;

template <std::size_t MR>
inline void panel(std::size_t n, std::size_t k, const double* a, std::size_t ai, std::size_t ap,
                  const double* b, double* c) {
  std::size_t j = 0;
  for (; j + kNR <= n; j += kNR) {
    double acc[MR][kNR];
    for (std::size_t r = 0; r < MR; ++r)
      for (std::size_t q = 0; q < kNR; ++q) acc[r][q] = c[r * n + j + q];
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n + j;
      for (std::size_t r = 0; r < MR; ++r) {
        const double av = a[r * ai + p * ap];
#pragma omp simd
        for (std::size_t q = 0; q < kNR; ++q) acc[r][q] += av * brow[q];
      }
    }
    for (std::size_t r = 0; r < MR; ++r)
      for (std::size_t q = 0; q < kNR; ++q) c[r * n + j + q] = acc[r][q];
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < MR; ++r) {
      double s = c[r * n + j];
      for (std::size_t p = 0; p < k; ++p) s += a[r * ai + p * ap] * b[p * n + j];
      c[r * n + j] = s;
    }
  }
}

constexpr std::size_t kMR = 4;

// Row block `blk` of the product; the last block may be short.
inline void row_block(std::size_t blk, std::size_t m, std::size_t n, std::size_t k,
                      const double* a, std::size_t ai, std::size_t ap, const double* b,
                      double* c) {
  std::size_t i = blk * kMR;
  if (i + kMR <= m) {
    panel<kMR>(n, k, a + i * ai, ai, ap, b, c + i * n);
    return;
  }
  for (; i < m; ++i) panel<1>(n, k, a + i * ai, ai, ap, b, c + i * n);
}

inline std::size_t row_blocks(std::size_t m) { return (m + kMR - 1) / kMR; }

inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

inline void small_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     const double* b, double* c) {
  for (std::size_t blk = 0; blk < row_blocks(m); ++blk) row_block(blk, m, n, k, a, k, 1, b, c);
}

inline void small_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     const double* b, double* c) {
  for (std::size_t blk = 0; blk < row_blocks(m); ++blk) row_block(blk, m, n, k, a, 1, m, b, c);
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (std::int64_t blk = 0; blk < sz(row_blocks(m)); ++blk)
    row_block(blk, m, n, k, ap, k, 1, bp, cp);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  std::vector<double> bt(k * n);
  transpose(n, k, b.data(), bt.data());
  gemm_nn(m, n, k, a, bt, c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (std::int64_t blk = 0; blk < sz(row_blocks(m)); ++blk)
    row_block(blk, m, n, k, ap, 1, m, bp, cp);
}

void batched_gemm_nn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (groups * m * n * k >= kParallelWork)
  for (std::int64_t g = 0; g < sz(groups); ++g)
    small_nn(m, n, k, ap + g * m * k, bp + g * k * n, cp + g * m * n);
}

void batched_gemm_nt(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel if (groups * m * n * k >= kParallelWork)
  {
    std::vector<double> bt(k * n);
#pragma omp for schedule(static)
    for (std::int64_t g = 0; g < sz(groups); ++g) {
      transpose(n, k, bp + g * n * k, bt.data());
      small_nn(m, n, k, ap + g * m * k, bt.data(), cp + g * m * n);
    }
  }
}

void batched_gemm_tn(std::size_t groups, std::size_t m, std::size_t n, std::size_t k,
                     std::span<const double> a, std::span<const double> b, std::span<double> c) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (groups * m * n * k >= kParallelWork)
  for (std::int64_t g = 0; g < sz(groups); ++g)
    small_tn(m, n, k, ap + g * k * m, bp + g * k * n, cp + g * m * n);
}

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                     std::span<const double> gamma, std::span<const double> beta, double eps,
                     std::span<double> y, std::span<double> mean, std::span<double> rstd) {
  const double inv_n = 1.0 / static_cast<double>(cols);
  const double* xp = x.data();
  double* yp = y.data();
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (std::int64_t r = 0; r < sz(rows); ++r) {
    const double* in = xp + r * cols;
    double* out = yp + r * cols;
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

}  // namespace gpvit::kernels::parallel
