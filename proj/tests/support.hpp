#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gpvit/dataset.hpp"
#include "gpvit/params.hpp"
#include "gpvit/rng.hpp"
#include "gpvit/tensor.hpp"
#include "gpvit/vit.hpp"

namespace gpvit::testing {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -2.0,
                                         double hi = 2.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::constant(std::move(shape), random_values(n, seed, lo, hi));
}

inline Tensor random_param(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), random_values(n, seed, lo, hi));
}

/// The desk-scale model every acceptance criterion talks about.
inline ViTConfig toy_config() { return ViTConfig{}; }

/// Small enough for exhaustive finite differences in unit tests.
inline ViTConfig tiny_config() {
  ViTConfig c;
  c.image_size = 8;
  c.channels = 2;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_blocks = 3;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  return c;
}

inline Tensor random_images(const ViTConfig& c, std::size_t batch, std::uint64_t seed) {
  return random_tensor({batch, c.image_size, c.image_size, c.channels}, seed, -1.0, 1.0);
}

inline std::vector<std::int32_t> random_labels(std::size_t n, std::size_t classes,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int32_t> y(n);
  for (auto& v : y) v = static_cast<std::int32_t>(rng.below(classes));
  return y;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  return std::equal(a.begin(), a.end(), b.begin(),
                    [](double x, double y) { return std::bit_cast<std::uint64_t>(x) ==
                                                    std::bit_cast<std::uint64_t>(y); });
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace gpvit::testing
