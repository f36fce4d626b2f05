#pragma once

#include <string>

namespace gpvit {

struct ViTConfig;

enum class PromptMode { none, shallow, deep, gated };
enum class GateMode { soft, hard, fixed };

std::string to_string(PromptMode mode);
std::string to_string(GateMode mode);
/// Throw ConfigError on unknown names.
PromptMode parse_prompt_mode(const std::string& name);
GateMode parse_gate_mode(const std::string& name);

/// Which tuning variant a model runs and how its prompt-side parameters
/// are set up.
struct TuningSetup {
  PromptMode mode = PromptMode::gated;
  std::size_t num_prompts = 8;
  GateMode gate_mode = GateMode::soft;
  double gate_init = 5.0;           // initial gate prior γ₀
  double fixed_gate = 1.0;          // gate value in fixed mode
  double gumbel_temperature = 1.0;  // relaxation temperature in hard mode
  bool attention_shaping = true;    // learn per-block temperatures

  void validate(const ViTConfig& config) const;
  bool operator==(const TuningSetup&) const = default;
};

}  // namespace gpvit
