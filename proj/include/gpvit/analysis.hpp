#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gpvit/prompts.hpp"
#include "gpvit/tensor.hpp"
#include "gpvit/tuning.hpp"
#include "gpvit/vit.hpp"

namespace gpvit {

/// g̃ˡ = gˡ · ∏_{m>l} (1 − gᵐ) over the gated blocks; the last entry is the
/// last gate itself. Throws DomainError for a gate outside [0, 1].
std::vector<double> accumulated_weights(std::span<const double> gates);

/// rˡ = g̃ˡ / Σ g̃. Throws DegenerateGatesError when the sum is zero.
std::vector<double> selection_ratio(std::span<const double> accumulated);

/// ∏ (1 − gˡ): what is left of the initial prompts at the last block.
double residual_prompt_weight(std::span<const double> gates);

/// Input prompts of the last block rebuilt from the recorded raw block
/// outputs: ∏(1−g)·P + Σ_l g̃ˡ · Z̃ˡ. Throws StateError when the trace does
/// not cover every gated block.
Tensor closed_form_aggregate(const PromptTrace& trace, std::span<const double> gates);

struct SelectionReport {
  std::string run_id;
  std::vector<double> gates;
  std::vector<double> accumulated;
  std::vector<double> ratios;
  double residual_weight = 0.0;

  static SelectionReport from_gates(std::vector<double> gates, std::string run_id);
  std::string to_json() const;
};

/// Bar chart of the selection ratios, one bar per gated block. Bar heights
/// are ratio × `plot_height` pixels, written with four decimals.
std::string selection_svg(const SelectionReport& report, double plot_height = 200.0);

struct AttentionExport {
  std::size_t block = 0;
  std::string head;  // head index, or "mean"
  std::filesystem::path path;
  std::vector<double> grid;  // row-major grid × grid
};

/// For each requested block, the CLS row of the attention map restricted to
/// the patch columns and renormalized to sum 1, laid out on the patch grid.
/// One CSV per head plus the head average:
///   block=<b>,head=<h|mean>,rows=<g>x<g>
///   <g lines of g comma-separated values>
/// `image` is a single [1 × H × W × C] input. Throws BoundsError for a block
/// index past the last block.
std::vector<AttentionExport> export_attention_maps(const ParamStore& params,
                                                   const ViTConfig& config,
                                                   const TuningSetup& tuning,
                                                   const Tensor& image,
                                                   const std::vector<std::size_t>& blocks,
                                                   const std::filesystem::path& out_dir);

/// `v` with 17 significant digits, enough to round-trip a double.
std::string format_number(double v);

}  // namespace gpvit
