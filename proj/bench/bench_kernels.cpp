// Serial reference kernels against their OpenMP versions at the shapes one
// toy training step uses (B=32, T=25 tokens, D=64, 4 heads, MLP 256).
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "gpvit/kernels.hpp"

namespace ks = gpvit::kernels::serial;
namespace kp = gpvit::kernels::parallel;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return v;
}

using Gemm = void (*)(std::size_t, std::size_t, std::size_t, std::span<const double>,
                      std::span<const double>, std::span<double>);
using Batched = void (*)(std::size_t, std::size_t, std::size_t, std::size_t,
                         std::span<const double>, std::span<const double>, std::span<double>);

template <Gemm F>
void bm_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * k, 1), b = filled(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    F(m, n, k, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * m * n * k));
}

template <Batched F>
void bm_batched(benchmark::State& state) {
  const std::size_t groups = 128, t = 25, d = 16;
  const auto a = filled(groups * t * d, 3), b = filled(groups * t * d, 4);
  std::vector<double> c(groups * t * t);
  for (auto _ : state) {
    F(groups, t, t, d, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
}

template <auto F>
void bm_softmax(benchmark::State& state) {
  const std::size_t rows = 128 * 25, cols = 25;
  const auto x = filled(rows * cols, 5);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    F(rows, cols, x, 1.0, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto F>
void bm_gelu(benchmark::State& state) {
  const auto x = filled(800 * 256, 6);
  std::vector<double> y(x.size()), dy(x.size());
  for (auto _ : state) {
    F(x, y, dy);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto F>
void bm_layer_norm(benchmark::State& state) {
  const std::size_t rows = 800, cols = 64;
  const auto x = filled(rows * cols, 7), g = filled(cols, 8), b = filled(cols, 9);
  std::vector<double> y(x.size()), mean(rows), rstd(rows);
  for (auto _ : state) {
    F(rows, cols, x, g, b, 1e-6, y, mean, rstd);
    benchmark::DoNotOptimize(y.data());
  }
}

// {m, n, k}: qkv/proj, fc1, fc2 forward products.
void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({800, 64, 64})->Args({800, 256, 64})->Args({800, 64, 256});
}

}  // namespace

BENCHMARK(bm_gemm<ks::gemm_nn>)->Name("gemm_nn/serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<kp::gemm_nn>)->Name("gemm_nn/parallel")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<ks::gemm_nt>)->Name("gemm_nt/serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<kp::gemm_nt>)->Name("gemm_nt/parallel")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<ks::gemm_tn>)->Name("gemm_tn/serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<kp::gemm_tn>)->Name("gemm_tn/parallel")->Apply(gemm_shapes);
BENCHMARK(bm_batched<ks::batched_gemm_nt>)->Name("attention_scores/serial");
BENCHMARK(bm_batched<kp::batched_gemm_nt>)->Name("attention_scores/parallel");
BENCHMARK(bm_softmax<ks::softmax_rows>)->Name("softmax/serial");
BENCHMARK(bm_softmax<kp::softmax_rows>)->Name("softmax/parallel");
BENCHMARK(bm_gelu<ks::gelu>)->Name("gelu/serial");
BENCHMARK(bm_gelu<kp::gelu>)->Name("gelu/parallel");
BENCHMARK(bm_layer_norm<ks::layer_norm_rows>)->Name("layer_norm/serial");
BENCHMARK(bm_layer_norm<kp::layer_norm_rows>)->Name("layer_norm/parallel");

BENCHMARK_MAIN();
