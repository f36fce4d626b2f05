#include "gpvit/prompts.hpp"

#include <cmath>
#include <cstring>

#include "gpvit/errors.hpp"

namespace gpvit {

namespace param_names {
std::string deep_prompt(std::size_t l) { return "prompt.deep." + std::to_string(l); }
std::string gate_prior(std::size_t l) { return "gate." + std::to_string(l); }
}  // namespace param_names

std::size_t PromptTrace::gated_count() const {
  std::size_t n = 0;
  for (const auto& e : blocks) n += e.gated ? 1 : 0;
  return n;
}

PromptSet PromptSet::from_params(const ParamStore& params, PromptMode mode, std::size_t blocks) {
  PromptSet set;
  if (mode == PromptMode::deep) {
    for (std::size_t l = 0; l < blocks; ++l)
      set.tokens.push_back(params.get(param_names::deep_prompt(l)));
  } else if (mode != PromptMode::none) {
    set.tokens.push_back(params.get(param_names::prompt_tokens));
  }
  return set;
}

GateBank GateBank::from_params(const ParamStore& params, const TuningSetup& tuning,
                               std::size_t blocks) {
  if (tuning.gate_mode == GateMode::fixed) return fixed(blocks, tuning.fixed_gate);
  GateBank bank;
  bank.count = blocks > 0 ? blocks - 1 : 0;
  bank.mode = tuning.gate_mode;
  bank.gumbel_temperature = tuning.gumbel_temperature;
  for (std::size_t l = 0; l < bank.count; ++l)
    bank.priors.push_back(params.get(param_names::gate_prior(l)));
  return bank;
}

GateBank GateBank::fixed(std::size_t blocks, double value) {
  GateBank bank;
  bank.count = blocks > 0 ? blocks - 1 : 0;
  bank.mode = GateMode::fixed;
  bank.fixed_value = value;
  return bank;
}

std::vector<Tensor> gate_values(const GateBank& gates, bool training, Rng* rng) {
  std::vector<Tensor> out;
  out.reserve(gates.count);
  if (gates.mode == GateMode::fixed) {
    for (std::size_t l = 0; l < gates.count; ++l) out.push_back(Tensor::scalar(gates.fixed_value));
    return out;
  }
  if (gates.priors.size() != gates.count) {
    throw StateError("gate bank holds " + std::to_string(gates.priors.size()) + " priors for " +
                     std::to_string(gates.count) + " gates");
  }
  for (const Tensor& prior : gates.priors) {
    if (gates.mode == GateMode::soft) {
      out.push_back(sigmoid(prior));
    } else if (!training) {
      const double g = 1.0 / (1.0 + std::exp(-prior.item()));
      out.push_back(Tensor::scalar(g > 0.5 ? 1.0 : 0.0));
    } else {
      if (!rng) throw StateError("hard gates need a random generator during training");
      const double u = rng->open_uniform();
      const double noise = std::log(u) - std::log1p(-u);  // difference of two Gumbels
      const Tensor relaxed = sigmoid(
          mul_scalar(add(prior, Tensor::scalar(noise)), 1.0 / gates.gumbel_temperature));
      out.push_back(straight_through(relaxed, {relaxed.item() > 0.5 ? 1.0 : 0.0}));
    }
  }
  return out;
}

std::vector<double> gate_numbers(const GateBank& gates) {
  std::vector<double> out;
  for (const Tensor& g : gate_values(gates, false)) out.push_back(g.item());
  return out;
}

namespace {

void require_prompts(const PromptSet& prompts, std::size_t sets, const ViTConfig& config,
                     const char* who) {
  if (prompts.tokens.size() != sets) {
    throw ConfigError(std::string(who) + ": expected " + std::to_string(sets) +
                      " prompt set(s), got " + std::to_string(prompts.tokens.size()));
  }
  for (const Tensor& p : prompts.tokens) {
    if (!p.defined() || p.rank() != 2 || p.dim(1) != config.embed_dim || p.dim(0) == 0) {
      throw ConfigError(std::string(who) + ": prompt tokens must be [N_p x " +
                        std::to_string(config.embed_dim) + "] with N_p >= 1");
    }
    if (p.dim(0) != prompts.tokens.front().dim(0)) {
      throw ConfigError(std::string(who) + ": every block needs the same number of prompts");
    }
  }
}

void require_temps(const TemperatureBank& temps, const ViTConfig& config, const char* who) {
  if (temps.size() != config.num_blocks) {
    throw ConfigError(std::string(who) + ": " + std::to_string(temps.size()) +
                      " temperatures for " + std::to_string(config.num_blocks) + " blocks");
  }
}

/// [CLS | prompts | patches] from the embedded [CLS | patches].
TokenSequence insert_prompts(const TokenSequence& embedded, const Tensor& prompts) {
  const std::size_t B = embedded.batch(), T = embedded.length();
  const Tensor p = expand_batch(prompts, B);
  Segments seg{prompts.dim(0), embedded.segments.patches};
  return {concat_tokens({slice_tokens(embedded.tokens, 0, 1), p,
                         slice_tokens(embedded.tokens, 1, T)}),
          seg};
}

TokenSequence replace_prompts(const TokenSequence& x, const Tensor& prompt_segment) {
  const Segments& s = x.segments;
  return {concat_tokens({slice_tokens(x.tokens, 0, 1), prompt_segment,
                         slice_tokens(x.tokens, s.patch_begin(), s.total())}),
          s};
}

Tensor prompt_segment(const TokenSequence& x) {
  return slice_tokens(x.tokens, x.segments.prompt_begin(), x.segments.prompt_end());
}

AttentionState* attention_slot(const ForwardOptions& options, std::size_t blocks, std::size_t l) {
  if (!options.attention) return nullptr;
  if (l == 0) options.attention->assign(blocks, AttentionState{});
  return &(*options.attention)[l];
}

}  // namespace

Tensor gated_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                     const PromptSet& prompts, const GateBank& gates, const TemperatureBank& temps,
                     const ForwardOptions& options) {
  config.validate();
  require_prompts(prompts, 1, config, "gated_forward");
  require_temps(temps, config, "gated_forward");
  const std::size_t L = config.num_blocks;
  if (gates.size() != L - 1) {
    throw ConfigError("gated_forward: " + std::to_string(gates.size()) + " gates for " +
                      std::to_string(L) + " blocks (need one per block but the last)");
  }
  const std::vector<Tensor> g = gate_values(gates, options.training, options.rng);

  TokenSequence x = insert_prompts(patch_embed(images, params, config), prompts.tokens[0]);
  if (options.trace) {
    options.trace->initial = prompt_segment(x).detach();
    options.trace->blocks.clear();
  }
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor before = prompt_segment(x);
    x = block_forward(x, BlockWeights::from(params, l), config, temps.tau(l),
                      attention_slot(options, L, l));
    const Tensor after = prompt_segment(x);
    PromptTraceEntry entry;
    if (l + 1 < L) {
      const Tensor mixed = convex_mix(after, before, g[l]);
      x = replace_prompts(x, mixed);
      entry.output = mixed;
      entry.gated = true;
      entry.gate = g[l].item();
    } else {
      entry.output = after;
    }
    if (options.trace) {
      entry.input = before.detach();
      entry.raw_output = after.detach();
      entry.output = entry.output.detach();
      options.trace->blocks.push_back(std::move(entry));
    }
  }
  return head_forward(x, params, config);
}

Tensor vpt_shallow_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                           const PromptSet& prompts, const TemperatureBank& temps,
                           const ForwardOptions& options) {
  config.validate();
  require_prompts(prompts, 1, config, "vpt_shallow_forward");
  require_temps(temps, config, "vpt_shallow_forward");
  const std::size_t L = config.num_blocks;
  TokenSequence x = insert_prompts(patch_embed(images, params, config), prompts.tokens[0]);
  for (std::size_t l = 0; l < L; ++l)
    x = block_forward(x, BlockWeights::from(params, l), config, temps.tau(l),
                      attention_slot(options, L, l));
  return head_forward(x, params, config);
}

Tensor vpt_deep_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                        const PromptSet& prompts, const TemperatureBank& temps,
                        const ForwardOptions& options) {
  config.validate();
  const std::size_t L = config.num_blocks;
  require_prompts(prompts, L, config, "vpt_deep_forward");
  require_temps(temps, config, "vpt_deep_forward");
  TokenSequence x = insert_prompts(patch_embed(images, params, config), prompts.tokens[0]);
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) x = replace_prompts(x, expand_batch(prompts.tokens[l], x.batch()));
    x = block_forward(x, BlockWeights::from(params, l), config, temps.tau(l),
                      attention_slot(options, L, l));
  }
  return head_forward(x, params, config);
}

Tensor model_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                     const TuningSetup& tuning, const ForwardOptions& options) {
  const std::size_t L = config.num_blocks;
  const TemperatureBank temps = TemperatureBank::from_params(params, L);
  switch (tuning.mode) {
    case PromptMode::none: {
      TokenSequence x = patch_embed(images, params, config);
      for (std::size_t l = 0; l < L; ++l)
        x = block_forward(x, BlockWeights::from(params, l), config, temps.tau(l),
                          attention_slot(options, L, l));
      return head_forward(x, params, config);
    }
    case PromptMode::shallow:
      return vpt_shallow_forward(images, params, config,
                                 PromptSet::from_params(params, tuning.mode, L), temps, options);
    case PromptMode::deep:
      return vpt_deep_forward(images, params, config,
                              PromptSet::from_params(params, tuning.mode, L), temps, options);
    case PromptMode::gated:
      return gated_forward(images, params, config, PromptSet::from_params(params, tuning.mode, L),
                           GateBank::from_params(params, tuning, L), temps, options);
  }
  throw ConfigError("unknown prompt mode");
}

std::vector<std::pair<std::string, Shape>> tuning_layout(const ViTConfig& config,
                                                         const TuningSetup& tuning) {
  const std::size_t L = config.num_blocks, D = config.embed_dim, Np = tuning.num_prompts;
  std::vector<std::pair<std::string, Shape>> out;
  if (tuning.mode == PromptMode::deep) {
    for (std::size_t l = 0; l < L; ++l) out.push_back({param_names::deep_prompt(l), {Np, D}});
  } else if (tuning.mode != PromptMode::none) {
    out.push_back({param_names::prompt_tokens, {Np, D}});
  }
  if (tuning.mode == PromptMode::gated && tuning.gate_mode != GateMode::fixed) {
    for (std::size_t l = 0; l + 1 < L; ++l) out.push_back({param_names::gate_prior(l), {1}});
  }
  for (std::size_t l = 0; l < L; ++l) out.push_back({param_names::temperature(l), {1}});
  out.push_back({param_names::head_weight, {D, config.num_classes}});
  out.push_back({param_names::head_bias, {config.num_classes}});
  return out;
}

void init_tuning_params(ParamStore& params, const ViTConfig& config, const TuningSetup& tuning,
                        std::uint64_t seed) {
  config.validate();
  tuning.validate(config);
  const double D = static_cast<double>(config.embed_dim);
  const double bound = std::sqrt(6.0 / (static_cast<double>(tuning.num_prompts) * D + D));
  Rng prompt_rng(derive_seed(seed, 1));
  for (const auto& [name, shape] : tuning_layout(config, tuning)) {
    if (name.rfind("prompt.", 0) == 0) {
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = prompt_rng.uniform(-bound, bound);
      params.set(name, Tensor::constant(shape, std::move(v)));
    } else if (name.rfind("gate.", 0) == 0) {
      params.set(name, Tensor::constant(shape, {tuning.gate_init}));
    } else if (name.rfind("temperature.", 0) == 0) {
      params.set(name, Tensor::constant(shape, {0.0}));
    }
  }
  init_head(params, config, derive_seed(seed, 2));
}

TrainableMask build_trainable_mask(const ViTConfig& config, const TuningSetup& tuning) {
  TrainableMask mask;
  for (const auto& [name, _] : tuning_layout(config, tuning)) {
    if (name.rfind("temperature.", 0) == 0 && !tuning.attention_shaping) continue;
    mask.insert(name);
  }
  return mask;
}

bool is_backbone_param(const std::string& name) {
  for (const char* prefix : {"patch_embed.", "cls_token", "pos_embed", "blocks.", "norm."})
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

FreezeReport assert_frozen(const ParamStore& before, const ParamStore& after,
                           const TrainableMask& mask) {
  if (before.names() != after.names()) {
    throw ConfigError("assert_frozen: the two parameter sets hold different names");
  }
  FreezeReport report;
  for (const auto& [name, a] : before.items()) {
    const Tensor& b = after.get(name);
    if (a.shape() != b.shape()) {
      throw ConfigError("assert_frozen: parameter '" + name + "' changed shape");
    }
    const bool same =
        std::memcmp(a.values().data(), b.values().data(), a.values().size_bytes()) == 0;
    if (same) continue;
    (mask.count(name) ? report.changed : report.violations).push_back(name);
  }
  return report;
}

}  // namespace gpvit
