#include "gpvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "gpvit/errors.hpp"

namespace gpvit {

std::size_t GradCheckReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const auto& e) { return !e.pass; }));
}

std::vector<GradCheckEntry> GradCheckReport::worst(std::size_t n) const {
  std::vector<GradCheckEntry> sorted = entries;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  if (sorted.size() > n) sorted.resize(n);
  return sorted;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::size_t> pick_entries(std::size_t count, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= count) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (count - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double evaluate(const LossFn& loss, const ParamStore& store) {
  const Tensor out = loss(store);
  if (out.numel() != 1) throw StateError("gradient check: loss must be a single value");
  return out.item();
}

}  // namespace

GradCheckReport finite_diff_check(const LossFn& loss, const ParamStore& params,
                                  const std::vector<std::string>& names,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw DomainError("gradient check: step must be positive");
  TrainableMask mask(names.begin(), names.end());
  for (const auto& name : names) params.get(name);

  const ParamStore live = params.with_trainable(mask);
  const Tensor base = loss(live);
  const ParamStore frozen = params.frozen();
  const double again = evaluate(loss, frozen);
  const double first = base.item();
  if (std::memcmp(&first, &again, sizeof(double)) != 0) {
    throw DeterminismError("gradient check: loss is not deterministic (" + std::to_string(first) +
                           " vs " + std::to_string(again) + ")");
  }
  backward(base);

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  ParamStore probe = frozen;
  for (const auto& name : names) {
    const Tensor& leaf = live.get(name);
    const Tensor& original = frozen.get(name);
    const std::vector<double> base_values(original.values().begin(), original.values().end());
    for (std::size_t i : pick_entries(leaf.numel(), options.max_entries_per_param, rng)) {
      std::vector<double> shifted = base_values;
      shifted[i] = base_values[i] + options.step;
      probe.set(name, Tensor::constant(original.shape(), shifted));
      const double plus = evaluate(loss, probe);
      shifted[i] = base_values[i] - options.step;
      probe.set(name, Tensor::constant(original.shape(), shifted));
      const double minus = evaluate(loss, probe);

      GradCheckEntry e;
      e.param = name;
      e.index = i;
      e.analytic = (leaf.has_grad() ? leaf.grad()[i] : 0.0) * options.analytic_scale;
      e.numeric = (plus - minus) / (2.0 * options.step);
      e.rel_error = relative_error(e.analytic, e.numeric);
      e.pass = e.rel_error < options.tolerance;
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.passed = report.passed && e.pass;
      report.entries.push_back(std::move(e));
    }
    probe.set(name, original);
  }
  return report;
}

}  // namespace gpvit
