#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gpvit/params.hpp"
#include "gpvit/tensor.hpp"

namespace gpvit {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// 0 checks every entry; otherwise a seeded sample of at most this many
  /// entries per parameter.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  /// Multiplies every analytic gradient before comparison. Anything other
  /// than 1 is a negative control.
  double analytic_scale = 1.0;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;

  std::size_t failures() const;
  /// Entries sorted by decreasing relative error.
  std::vector<GradCheckEntry> worst(std::size_t n) const;
};

/// |a − n| / max(1, |a|, |n|)
double relative_error(double analytic, double numeric);

using LossFn = std::function<Tensor(const ParamStore&)>;

/// Compares reverse-mode gradients of `loss` with central differences
/// (f(p+h) − f(p−h)) / 2h for every entry of the parameters in `names`.
/// Parameters not listed are held constant. Throws DeterminismError when
/// two evaluations at the same point disagree.
GradCheckReport finite_diff_check(const LossFn& loss, const ParamStore& params,
                                  const std::vector<std::string>& names,
                                  const GradCheckOptions& options = {});

}  // namespace gpvit
