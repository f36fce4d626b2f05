#include "gpvit/analysis.hpp"

#include <cmath>
#include <cstdio>

#include "binio.hpp"
#include "gpvit/errors.hpp"
#include "json.hpp"

namespace gpvit {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> accumulated_weights(std::span<const double> gates) {
  for (std::size_t l = 0; l < gates.size(); ++l) {
    if (!(gates[l] >= 0.0 && gates[l] <= 1.0)) {
      throw DomainError("gate " + std::to_string(l) + " is " + format_number(gates[l]) +
                        ", outside [0, 1]");
    }
  }
  std::vector<double> out(gates.size());
  double keep = 1.0;  // ∏ (1 − gᵐ) over the blocks after l
  for (std::size_t l = gates.size(); l-- > 0;) {
    out[l] = keep * gates[l];
    keep *= 1.0 - gates[l];
  }
  return out;
}

std::vector<double> selection_ratio(std::span<const double> accumulated) {
  double total = 0.0;
  for (double w : accumulated) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw DomainError("accumulated weight " + format_number(w) + " is not a finite value >= 0");
    }
    total += w;
  }
  if (!(total > 0.0)) {
    throw DegenerateGatesError(
        "selection ratio undefined: every accumulated weight is zero (all gates closed)");
  }
  std::vector<double> out;
  out.reserve(accumulated.size());
  for (double w : accumulated) out.push_back(w / total);
  return out;
}

double residual_prompt_weight(std::span<const double> gates) {
  accumulated_weights(gates);  // range check
  double keep = 1.0;
  for (double g : gates) keep *= 1.0 - g;
  return keep;
}

Tensor closed_form_aggregate(const PromptTrace& trace, std::span<const double> gates) {
  const std::size_t n = gates.size();
  if (!trace.initial.defined()) throw StateError("closed_form_aggregate: trace has no prompts");
  if (trace.blocks.size() < n || trace.gated_count() < n) {
    throw StateError("closed_form_aggregate: trace covers " +
                     std::to_string(trace.gated_count()) + " gated blocks, need " +
                     std::to_string(n));
  }
  const std::vector<double> weights = accumulated_weights(gates);
  const double residual = residual_prompt_weight(gates);

  auto p = trace.initial.values();
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = residual * p[i];
  for (std::size_t l = 0; l < n; ++l) {
    const Tensor& raw = trace.blocks[l].raw_output;
    if (!raw.defined() || raw.shape() != trace.initial.shape()) {
      throw StateError("closed_form_aggregate: block " + std::to_string(l) +
                       " has no recorded prompt output of the right shape");
    }
    auto z = raw.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[l] * z[i];
  }
  return Tensor::constant(trace.initial.shape(), std::move(out));
}

SelectionReport SelectionReport::from_gates(std::vector<double> gates, std::string run_id) {
  SelectionReport r;
  r.run_id = std::move(run_id);
  r.accumulated = accumulated_weights(gates);
  r.ratios = selection_ratio(r.accumulated);
  r.residual_weight = residual_prompt_weight(gates);
  r.gates = std::move(gates);
  return r;
}

std::string SelectionReport::to_json() const {
  nlohmann::ordered_json j;
  j["run_id"] = run_id;
  j["gates"] = gates;
  j["accumulated_weights"] = accumulated;
  j["selection_ratios"] = ratios;
  j["residual_prompt_weight"] = residual_weight;
  return j.dump(2) + "\n";
}

std::string selection_svg(const SelectionReport& report, double plot_height) {
  const double bar = 40.0, gap = 12.0, margin = 30.0;
  const std::size_t n = report.ratios.size();
  const double width = 2 * margin + static_cast<double>(n) * (bar + gap) - gap;
  const double height = plot_height + 2 * margin;
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n",
                width, height);
  out += buf;
  out += "<title>selection ratio per gated block (" + report.run_id + ")</title>\n";
  const double baseline = margin + plot_height;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.0f\" y1=\"%.4f\" x2=\"%.0f\" y2=\"%.4f\" stroke=\"black\"/>\n",
                margin, baseline, width - margin, baseline);
  out += buf;
  for (std::size_t l = 0; l < n; ++l) {
    const double h = report.ratios[l] * plot_height;
    const double x = margin + static_cast<double>(l) * (bar + gap);
    std::snprintf(buf, sizeof buf,
                  "<rect class=\"bar\" data-block=\"%zu\" data-ratio=\"%s\" x=\"%.4f\" "
                  "y=\"%.4f\" width=\"%.4f\" height=\"%.4f\" fill=\"steelblue\"/>\n",
                  l, format_number(report.ratios[l]).c_str(), x, baseline - h, bar, h);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.4f\" y=\"%.4f\" font-size=\"10\" text-anchor=\"middle\">%zu</text>\n",
                  x + bar / 2, baseline + 14, l);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

std::vector<AttentionExport> export_attention_maps(const ParamStore& params,
                                                   const ViTConfig& config,
                                                   const TuningSetup& tuning,
                                                   const Tensor& image,
                                                   const std::vector<std::size_t>& blocks,
                                                   const std::filesystem::path& out_dir) {
  for (std::size_t b : blocks) {
    if (b >= config.num_blocks) {
      throw BoundsError("attention export: block " + std::to_string(b) + " is out of range (" +
                        std::to_string(config.num_blocks) + " blocks)");
    }
  }
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw DimensionError("attention export needs one image [1 x H x W x C], got " +
                         shape_str(image.shape()));
  }
  std::vector<AttentionState> states;
  ForwardOptions opts;
  opts.attention = &states;
  model_forward(image, params.frozen(), config, tuning, opts);

  const std::size_t T = states.front().scores.dim(2);
  const std::size_t N = config.num_patches();
  const std::size_t patch_begin = T - N;
  const std::size_t H = config.num_heads;
  const std::size_t g = config.grid();

  std::vector<AttentionExport> out;
  for (std::size_t b : blocks) {
    auto scores = states[b].scores.values();  // [1 × H × T × T]
    std::vector<double> mean(N, 0.0);
    auto emit = [&](const std::string& head, std::vector<double> grid) {
      AttentionExport e;
      e.block = b;
      e.head = head;
      e.path = out_dir / ("attention_block" + std::to_string(b) + "_head" + head + ".csv");
      std::string text = "block=" + std::to_string(b) + ",head=" + head +
                         ",rows=" + std::to_string(g) + "x" + std::to_string(g) + "\n";
      for (std::size_t r = 0; r < g; ++r) {
        for (std::size_t c = 0; c < g; ++c)
          text += (c ? "," : "") + format_number(grid[r * g + c]);
        text += "\n";
      }
      binio::write_file(e.path, text);
      e.grid = std::move(grid);
      out.push_back(std::move(e));
    };
    for (std::size_t h = 0; h < H; ++h) {
      const double* cls_row = scores.data() + h * T * T;  // query 0 is CLS
      double total = 0.0;
      for (std::size_t j = 0; j < N; ++j) total += cls_row[patch_begin + j];
      std::vector<double> grid(N);
      for (std::size_t j = 0; j < N; ++j) {
        grid[j] = cls_row[patch_begin + j] / total;
        mean[j] += grid[j] / static_cast<double>(H);
      }
      emit(std::to_string(h), std::move(grid));
    }
    emit("mean", std::move(mean));
  }
  return out;
}

}  // namespace gpvit
