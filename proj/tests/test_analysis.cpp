#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "gpvit/analysis.hpp"
#include "gpvit/errors.hpp"
#include "gpvit/files.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace gpvit;
using namespace gpvit::testing;
namespace fs = std::filesystem;

namespace {

// Direct product formula, evaluated independently of the library's
// backward sweep.
std::vector<double> accumulated_oracle(const std::vector<double>& g) {
  std::vector<double> out(g.size());
  for (std::size_t l = 0; l < g.size(); ++l) {
    long double w = g[l];
    for (std::size_t m = l + 1; m < g.size(); ++m) w *= 1.0L - g[m];
    out[l] = static_cast<double>(w);
  }
  return out;
}

struct GatedRun {
  ViTConfig config;
  TuningSetup tuning;
  ParamStore params;
};

GatedRun gated_run(std::uint64_t seed, std::size_t prompts = 3) {
  GatedRun r{tiny_config(), {}, {}};
  r.tuning.mode = PromptMode::gated;
  r.tuning.num_prompts = prompts;
  r.params = init_params(r.config, seed);
  init_tuning_params(r.params, r.config, r.tuning, seed);
  return r;
}

PromptTrace trace_with(const GatedRun& r, const GateBank& gates, const Tensor& images) {
  PromptTrace trace;
  ForwardOptions opts;
  opts.trace = &trace;
  gated_forward(images, r.params, r.config,
                PromptSet::from_params(r.params, PromptMode::gated, r.config.num_blocks), gates,
                TemperatureBank::from_params(r.params, r.config.num_blocks), opts);
  return trace;
}

GateBank soft_bank(const std::vector<double>& priors) {
  GateBank g;
  g.count = priors.size();
  for (double p : priors) g.priors.push_back(Tensor::scalar(p));
  return g;
}

std::vector<std::vector<double>> parse_grid(const std::string& text, std::string& header) {
  std::istringstream in(text);
  std::getline(in, header);
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<double> row;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gpvit_test_analysis" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("accumulated weight examples") {
  CHECK(accumulated_weights(std::vector<double>{1, 1, 1}) == std::vector<double>{0, 0, 1});
  CHECK(accumulated_weights(std::vector<double>{0.5, 0.5, 0.5}) ==
        std::vector<double>{0.125, 0.25, 0.5});
  CHECK(accumulated_weights(std::vector<double>{0, 0, 0}) == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(accumulated_weights(std::vector<double>{0.5, 1.5}), DomainError);
  CHECK_THROWS_AS(accumulated_weights(std::vector<double>{-0.1}), DomainError);
  CHECK_THROWS_AS(accumulated_weights(std::vector<double>{NAN}), DomainError);
}

TEST_CASE("selection ratio examples") {
  const auto r = selection_ratio(std::vector<double>{0.125, 0.25, 0.5});
  CHECK(r[0] == doctest::Approx(1.0 / 7).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(2.0 / 7).epsilon(1e-15));
  CHECK(r[2] == doctest::Approx(4.0 / 7).epsilon(1e-15));
  CHECK(selection_ratio(std::vector<double>{0, 0, 1}) == std::vector<double>{0, 0, 1});
  for (double v : selection_ratio(std::vector<double>{0.3, 0.3, 0.3, 0.3})) CHECK(v == 0.25);
  CHECK_THROWS_AS(selection_ratio(std::vector<double>{0, 0, 0}), DegenerateGatesError);
  CHECK_THROWS_AS(SelectionReport::from_gates({0, 0}, "x"), DegenerateGatesError);
}

TEST_CASE("accumulated weights and ratios: random properties") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t n = 1 + seed % 7;
    const auto g = random_values(n, seed, 0.0, 1.0);
    const auto acc = accumulated_weights(g);
    const auto want = accumulated_oracle(g);
    CHECK(acc.back() == g.back());
    for (std::size_t l = 0; l < n; ++l) CHECK(std::abs(acc[l] - want[l]) < 1e-15);
    // Block weights and the residual partition the unit mass.
    const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
    CHECK(std::abs(total + residual_prompt_weight(g) - 1.0) < 1e-12);
    const auto r = selection_ratio(acc);
    double s = 0.0;
    for (double v : r) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-10);
  }
}

TEST_CASE("monotone erasure by the last gate") {
  double prev_last = 0.0, prev_rest = 1.0;
  for (double last : {0.9, 0.99, 0.999}) {
    const auto r = selection_ratio(accumulated_weights(std::vector<double>{0.6, 0.3, 0.8, last}));
    const double rest = r[0] + r[1] + r[2];
    CHECK(r.back() > prev_last);
    CHECK(rest < prev_rest);
    prev_last = r.back();
    prev_rest = rest;
  }
  CHECK(prev_last > 0.998);
}

TEST_CASE("closed-form aggregate matches the sequential forward") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GatedRun run = gated_run(200 + seed);
    const auto priors = random_values(run.config.num_blocks - 1, 300 + seed, -3.0, 3.0);
    const PromptTrace trace =
        trace_with(run, soft_bank(priors), random_images(run.config, 2, 400 + seed));
    std::vector<double> gates;
    for (const auto& e : trace.blocks)
      if (e.gated) gates.push_back(e.gate);
    const Tensor agg = closed_form_aggregate(trace, gates);
    CHECK(max_abs_diff(agg.values(), trace.blocks.back().input.values()) < 1e-10);
  }

  const GatedRun run = gated_run(500);
  const Tensor img = random_images(run.config, 1, 501);
  {
    const PromptTrace t = trace_with(run, GateBank::fixed(run.config.num_blocks, 1.0), img);
    const Tensor agg = closed_form_aggregate(t, std::vector<double>{1, 1});
    CHECK(bit_equal(agg.values(), t.blocks[1].raw_output.values()));
  }
  {
    const PromptTrace t = trace_with(run, GateBank::fixed(run.config.num_blocks, 0.0), img);
    const Tensor agg = closed_form_aggregate(t, std::vector<double>{0, 0});
    CHECK(bit_equal(agg.values(), t.initial.values()));
  }
  PromptTrace partial = trace_with(run, GateBank::fixed(run.config.num_blocks, 0.5), img);
  CHECK_THROWS_AS(closed_form_aggregate(partial, std::vector<double>{0.5, 0.5, 0.5}), StateError);
  partial.blocks.resize(1);
  CHECK_THROWS_AS(closed_form_aggregate(partial, std::vector<double>{0.5, 0.5}), StateError);
}

TEST_CASE("selection report JSON and SVG") {
  const SelectionReport rep = SelectionReport::from_gates({0.5, 0.5, 0.5}, "run-7");
  CHECK(rep.residual_weight == 0.125);
  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("run_id") == "run-7");
  CHECK(j.at("gates").get<std::vector<double>>() == std::vector<double>{0.5, 0.5, 0.5});
  CHECK(j.at("accumulated_weights").get<std::vector<double>>() ==
        std::vector<double>{0.125, 0.25, 0.5});
  const auto r = j.at("selection_ratios").get<std::vector<double>>();
  CHECK(r == rep.ratios);
  CHECK(j.at("residual_prompt_weight").get<double>() == 0.125);
  CHECK(rep.to_json() == SelectionReport::from_gates({0.5, 0.5, 0.5}, "run-7").to_json());

  const std::string svg = selection_svg(rep, 200.0);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  const std::regex bar_re(R"re(data-block="(\d+)"[^>]*height="([0-9.]+)")re");
  std::size_t bars = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), bar_re); it != std::sregex_iterator();
       ++it, ++bars) {
    const std::size_t b = std::stoul((*it)[1]);
    CHECK(std::stod((*it)[2]) == doctest::Approx(rep.ratios.at(b) * 200.0).epsilon(1e-6));
  }
  CHECK(bars == 3);
}

TEST_CASE("format_number round-trips doubles") {
  for (double v : random_values(100, 77, -1e6, 1e6))
    CHECK(std::stod(format_number(v)) == v);
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("attention export: contract, determinism, bounds") {
  const GatedRun run = gated_run(600, 2);
  const Tensor img = random_images(run.config, 1, 601);
  const fs::path dir = scratch("contract");
  const auto exports = export_attention_maps(run.params, run.config, run.tuning, img, {0, 2}, dir);
  const std::size_t g = run.config.grid();
  CHECK(exports.size() == 2 * (run.config.num_heads + 1));
  for (const auto& e : exports) {
    std::string header;
    const auto rows = parse_grid(read_file(e.path), header);
    CHECK(header == "block=" + std::to_string(e.block) + ",head=" + e.head + ",rows=" +
                        std::to_string(g) + "x" + std::to_string(g));
    REQUIRE(rows.size() == g);
    double total = 0.0;
    for (std::size_t r = 0; r < g; ++r) {
      REQUIRE(rows[r].size() == g);
      for (std::size_t c = 0; c < g; ++c) {
        CHECK(rows[r][c] == e.grid[r * g + c]);
        CHECK(rows[r][c] >= 0.0);
        total += rows[r][c];
      }
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  // The mean file is the head average of the per-head files.
  for (std::size_t i = 0; i < g * g; ++i) {
    double m = 0.0;
    for (std::size_t h = 0; h < run.config.num_heads; ++h) m += exports[h].grid[i];
    CHECK(std::abs(exports[run.config.num_heads].grid[i] - m / run.config.num_heads) < 1e-15);
  }

  const fs::path again = scratch("again");
  const auto second = export_attention_maps(run.params, run.config, run.tuning, img, {0, 2}, again);
  for (std::size_t i = 0; i < exports.size(); ++i)
    CHECK(read_file(exports[i].path) == read_file(second[i].path));

  CHECK_THROWS_AS(export_attention_maps(run.params, run.config, run.tuning, img, {3}, dir),
                  BoundsError);
  CHECK_THROWS_AS(export_attention_maps(run.params, run.config, run.tuning,
                                        random_images(run.config, 2, 1), {0}, dir),
                  DimensionError);
}

TEST_CASE("attention export under a huge temperature is flat") {
  GatedRun run = gated_run(700, 2);
  for (std::size_t l = 0; l < run.config.num_blocks; ++l)
    run.params.set(param_names::temperature(l), Tensor::constant({1}, {std::log(1e7)}));
  const auto exports = export_attention_maps(run.params, run.config, run.tuning,
                                             random_images(run.config, 1, 701), {0, 1, 2},
                                             scratch("flat"));
  for (const auto& e : exports) {
    const auto [lo, hi] = std::minmax_element(e.grid.begin(), e.grid.end());
    CHECK(*hi - *lo < 1e-3);
  }
}
