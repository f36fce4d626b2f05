#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpvit/params.hpp"
#include "gpvit/rng.hpp"
#include "gpvit/tensor.hpp"
#include "gpvit/tuning.hpp"
#include "gpvit/vit.hpp"

namespace gpvit {

namespace param_names {
inline const std::string prompt_tokens = "prompt.tokens";
std::string deep_prompt(std::size_t l);
std::string gate_prior(std::size_t l);
}  // namespace param_names

/// Learnable prompt tokens: one [N_p × D] set for shallow and gated
/// tuning, one per block for deep tuning.
struct PromptSet {
  std::vector<Tensor> tokens;

  static PromptSet from_params(const ParamStore& params, PromptMode mode, std::size_t blocks);
  std::size_t count() const { return tokens.empty() ? 0 : tokens.front().dim(0); }
};

/// Gate priors γ for every block but the last, plus how they become gates.
struct GateBank {
  std::size_t count = 0;      // L − 1
  std::vector<Tensor> priors;  // empty in fixed mode
  GateMode mode = GateMode::soft;
  double gumbel_temperature = 1.0;
  double fixed_value = 1.0;

  static GateBank from_params(const ParamStore& params, const TuningSetup& tuning,
                              std::size_t blocks);
  /// All gates pinned to `value` (no priors involved).
  static GateBank fixed(std::size_t blocks, double value);
  std::size_t size() const { return count; }
};

/// Gate values for one forward pass, as tape scalars.
///   soft            sigmoid(γ)
///   hard, training  Gumbel-Sigmoid sample thresholded at 0.5; the forward
///                   value is 0 or 1, the gradient is that of the relaxed
///                   sigmoid((γ + logistic noise) / t)
///   hard, inference sigmoid(γ) > 0.5
///   fixed           the pinned value
/// `rng` is required for hard gates in training.
std::vector<Tensor> gate_values(const GateBank& gates, bool training, Rng* rng = nullptr);

/// Deterministic (inference) gate values as plain numbers.
std::vector<double> gate_numbers(const GateBank& gates);

struct PromptTraceEntry {
  Tensor input;       // prompt segment entering the block
  Tensor raw_output;  // prompt segment the block produced
  Tensor output;      // what the next block receives (gated, or raw for the last block)
  bool gated = false;
  double gate = 1.0;
};

/// Values of the prompt segment around every block of one gated forward.
struct PromptTrace {
  Tensor initial;  // [B × N_p × D]
  std::vector<PromptTraceEntry> blocks;

  std::size_t gated_count() const;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  /// When set, receives one entry per block.
  std::vector<AttentionState>* attention = nullptr;
  /// Records the prompt trace (values only) when set.
  PromptTrace* trace = nullptr;
};

/// Gated prompt tuning: prompts enter once between CLS and patches; after
/// every block but the last the prompt segment becomes
/// g·(block output) + (1 − g)·(block input).
Tensor gated_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                     const PromptSet& prompts, const GateBank& gates, const TemperatureBank& temps,
                     const ForwardOptions& options = {});

/// Prompts enter once and flow through every block unmodified.
Tensor vpt_shallow_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                           const PromptSet& prompts, const TemperatureBank& temps,
                           const ForwardOptions& options = {});

/// Before every block the prompt segment is replaced by that block's own
/// learnable prompts; the previous block's prompt outputs are dropped.
Tensor vpt_deep_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                        const PromptSet& prompts, const TemperatureBank& temps,
                        const ForwardOptions& options = {});

/// Dispatches on `tuning.mode`, reading prompts, gates and temperatures
/// from `params`.
Tensor model_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                     const TuningSetup& tuning, const ForwardOptions& options = {});

/// Shapes of the tuning-side parameters for `tuning`.
std::vector<std::pair<std::string, Shape>> tuning_layout(const ViTConfig& config,
                                                         const TuningSetup& tuning);

/// Adds prompts, gate priors (= gate_init), log-temperatures (= 0) and a
/// fresh head to `params`. Prompts are U(−b, b), b = √(6 / (N_p·D + D)).
void init_tuning_params(ParamStore& params, const ViTConfig& config, const TuningSetup& tuning,
                        std::uint64_t seed);

/// Parameters that receive updates: prompts and head always; gate priors
/// for learnable gated modes; temperatures when attention shaping is on.
TrainableMask build_trainable_mask(const ViTConfig& config, const TuningSetup& tuning);

/// True for names that belong to the pretrained encoder.
bool is_backbone_param(const std::string& name);

struct FreezeReport {
  std::vector<std::string> violations;  // frozen parameters whose bits changed
  std::vector<std::string> changed;     // trainable parameters that changed
  bool ok() const { return violations.empty(); }
};

/// Every parameter outside `mask` must be bit-identical between the two
/// stores. Throws ConfigError if the stores hold different parameters.
FreezeReport assert_frozen(const ParamStore& before, const ParamStore& after,
                           const TrainableMask& mask);

}  // namespace gpvit
