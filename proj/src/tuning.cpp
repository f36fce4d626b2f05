#include "gpvit/tuning.hpp"

#include <cmath>

#include "gpvit/errors.hpp"
#include "gpvit/vit.hpp"

namespace gpvit {

std::string to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::none: return "none";
    case PromptMode::shallow: return "shallow";
    case PromptMode::deep: return "deep";
    case PromptMode::gated: return "gated";
  }
  return "?";
}

std::string to_string(GateMode mode) {
  switch (mode) {
    case GateMode::soft: return "soft";
    case GateMode::hard: return "hard";
    case GateMode::fixed: return "fixed";
  }
  return "?";
}

PromptMode parse_prompt_mode(const std::string& name) {
  if (name == "none") return PromptMode::none;
  if (name == "shallow") return PromptMode::shallow;
  if (name == "deep") return PromptMode::deep;
  if (name == "gated") return PromptMode::gated;
  throw ConfigError("unknown prompt mode '" + name + "' (expected none, shallow, deep or gated)");
}

GateMode parse_gate_mode(const std::string& name) {
  if (name == "soft") return GateMode::soft;
  if (name == "hard") return GateMode::hard;
  if (name == "fixed") return GateMode::fixed;
  throw ConfigError("unknown gate mode '" + name + "' (expected soft, hard or fixed)");
}

void TuningSetup::validate(const ViTConfig& config) const {
  if (mode != PromptMode::none && num_prompts == 0) {
    throw ConfigError("tuning: " + to_string(mode) + " mode needs at least one prompt token");
  }
  (void)config;
  if (!std::isfinite(gate_init)) throw ConfigError("tuning: gate_init must be finite");
  if (!(gumbel_temperature > 0.0)) throw ConfigError("tuning: gumbel_temperature must be positive");
  if (!(fixed_gate >= 0.0 && fixed_gate <= 1.0)) {
    throw ConfigError("tuning: fixed_gate must lie in [0, 1]");
  }
}

}  // namespace gpvit
