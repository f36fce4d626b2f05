#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpvit/params.hpp"
#include "gpvit/tensor.hpp"

namespace gpvit {

struct ViTConfig {
  std::size_t image_size = 32;  // H = W
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t num_blocks = 6;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 10;
  double ln_eps = 1e-6;

  /// Throws ConfigError on any inconsistent field.
  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }

  bool operator==(const ViTConfig&) const = default;
};

/// Offsets of the [CLS | prompts | patches] layout.
struct Segments {
  std::size_t prompts = 0;
  std::size_t patches = 0;

  static constexpr std::size_t cls_index = 0;
  std::size_t prompt_begin() const { return 1; }
  std::size_t prompt_end() const { return 1 + prompts; }
  std::size_t patch_begin() const { return 1 + prompts; }
  std::size_t total() const { return 1 + prompts + patches; }

  bool operator==(const Segments&) const = default;
};

struct TokenSequence {
  Tensor tokens;  // [B × T × D]
  Segments segments;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t length() const { return tokens.dim(1); }
};

/// Recorded internals of one attention call, heads split out:
/// q, k, v are [B × h × T × d_head], scores are [B × h × T × T].
struct AttentionState {
  Tensor q, k, v, scores;
};

/// Per-block learnable log-temperatures; τ = exp(log τ) keeps every
/// temperature positive.
struct TemperatureBank {
  std::vector<Tensor> log_tau;

  static TemperatureBank unit(std::size_t blocks);
  static TemperatureBank from_params(const ParamStore& params, std::size_t blocks);
  std::size_t size() const { return log_tau.size(); }
  Tensor tau(std::size_t block) const { return exp(log_tau.at(block)); }
};

namespace param_names {
std::string block(std::size_t l, const std::string& leaf);
std::string temperature(std::size_t l);
inline const std::string patch_weight = "patch_embed.weight";
inline const std::string patch_bias = "patch_embed.bias";
inline const std::string cls_token = "cls_token";
inline const std::string pos_embed = "pos_embed";
inline const std::string norm_gamma = "norm.gamma";
inline const std::string norm_beta = "norm.beta";
inline const std::string head_weight = "head.weight";
inline const std::string head_bias = "head.bias";
}  // namespace param_names

struct BlockWeights {
  Tensor ln1_gamma, ln1_beta;
  Tensor q_w, q_b, k_w, k_b, v_w, v_b;
  Tensor proj_w, proj_b;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;

  static BlockWeights from(const ParamStore& params, std::size_t block);
};

/// Expected shape of every backbone and head parameter for `config`.
std::vector<std::pair<std::string, Shape>> backbone_layout(const ViTConfig& config);

/// Backbone plus classification head. Linear weights are Glorot-uniform,
/// biases, CLS and positional embeddings are N(0, 0.02²), LayerNorm is the
/// identity affine map.
ParamStore init_params(const ViTConfig& config, std::uint64_t seed);

/// Glorot-uniform head for a fresh downstream task.
void init_head(ParamStore& params, const ViTConfig& config, std::uint64_t seed);

/// CLS followed by the embedded patches, positional embedding on patches.
TokenSequence patch_embed(const Tensor& images, const ParamStore& params, const ViTConfig& config);

/// Multi-head self-attention over the whole sequence. Logits are scaled by
/// 1/(τ·√d_head); an undefined `tau` runs the plain softmax instead.
TokenSequence attention(const TokenSequence& x, const BlockWeights& w, std::size_t heads,
                        const Tensor& tau, AttentionState* state = nullptr);

/// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(·)).
TokenSequence block_forward(const TokenSequence& x, const BlockWeights& w, const ViTConfig& config,
                            const Tensor& tau, AttentionState* state = nullptr);

/// Final LayerNorm on the CLS token followed by the linear head.
Tensor head_forward(const TokenSequence& x, const ParamStore& params, const ViTConfig& config);

/// patch_embed → blocks (block l uses τ^l) → head, with no prompts.
Tensor vit_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                   const TemperatureBank& temps);

}  // namespace gpvit
