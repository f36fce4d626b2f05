#include "gpvit/vit.hpp"

#include <cmath>

#include "gpvit/errors.hpp"
#include "gpvit/rng.hpp"

namespace gpvit {

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_size == 0 || channels == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 ||
      mlp_ratio == 0 || num_classes == 0) {
    fail("all sizes must be positive");
  }
  if (num_blocks == 0) fail("num_blocks must be at least 1");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not a multiple of patch_size " +
         std::to_string(patch_size));
  }
  if (embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

namespace param_names {
std::string block(std::size_t l, const std::string& leaf) {
  return "blocks." + std::to_string(l) + "." + leaf;
}
std::string temperature(std::size_t l) { return "temperature." + std::to_string(l); }
}  // namespace param_names

TemperatureBank TemperatureBank::unit(std::size_t blocks) {
  TemperatureBank bank;
  for (std::size_t l = 0; l < blocks; ++l) bank.log_tau.push_back(Tensor::scalar(0.0));
  return bank;
}

TemperatureBank TemperatureBank::from_params(const ParamStore& params, std::size_t blocks) {
  TemperatureBank bank;
  for (std::size_t l = 0; l < blocks; ++l)
    bank.log_tau.push_back(params.get(param_names::temperature(l)));
  return bank;
}

BlockWeights BlockWeights::from(const ParamStore& p, std::size_t l) {
  using param_names::block;
  BlockWeights w;
  w.ln1_gamma = p.get(block(l, "ln1.gamma"));
  w.ln1_beta = p.get(block(l, "ln1.beta"));
  w.q_w = p.get(block(l, "attn.q.weight"));
  w.q_b = p.get(block(l, "attn.q.bias"));
  w.k_w = p.get(block(l, "attn.k.weight"));
  w.k_b = p.get(block(l, "attn.k.bias"));
  w.v_w = p.get(block(l, "attn.v.weight"));
  w.v_b = p.get(block(l, "attn.v.bias"));
  w.proj_w = p.get(block(l, "attn.proj.weight"));
  w.proj_b = p.get(block(l, "attn.proj.bias"));
  w.ln2_gamma = p.get(block(l, "ln2.gamma"));
  w.ln2_beta = p.get(block(l, "ln2.beta"));
  w.fc1_w = p.get(block(l, "mlp.fc1.weight"));
  w.fc1_b = p.get(block(l, "mlp.fc1.bias"));
  w.fc2_w = p.get(block(l, "mlp.fc2.weight"));
  w.fc2_b = p.get(block(l, "mlp.fc2.bias"));
  return w;
}

std::vector<std::pair<std::string, Shape>> backbone_layout(const ViTConfig& c) {
  using namespace param_names;
  const std::size_t D = c.embed_dim, M = c.mlp_dim();
  std::vector<std::pair<std::string, Shape>> out{
      {patch_weight, {c.patch_dim(), D}},
      {patch_bias, {D}},
      {cls_token, {1, D}},
      {pos_embed, {c.num_patches(), D}},
  };
  for (std::size_t l = 0; l < c.num_blocks; ++l) {
    out.push_back({block(l, "ln1.gamma"), {D}});
    out.push_back({block(l, "ln1.beta"), {D}});
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.proj"}) {
      out.push_back({block(l, std::string(proj) + ".weight"), {D, D}});
      out.push_back({block(l, std::string(proj) + ".bias"), {D}});
    }
    out.push_back({block(l, "ln2.gamma"), {D}});
    out.push_back({block(l, "ln2.beta"), {D}});
    out.push_back({block(l, "mlp.fc1.weight"), {D, M}});
    out.push_back({block(l, "mlp.fc1.bias"), {M}});
    out.push_back({block(l, "mlp.fc2.weight"), {M, D}});
    out.push_back({block(l, "mlp.fc2.bias"), {D}});
  }
  out.push_back({norm_gamma, {D}});
  out.push_back({norm_beta, {D}});
  out.push_back({head_weight, {D, c.num_classes}});
  out.push_back({head_bias, {c.num_classes}});
  return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor glorot(const Shape& shape, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::constant(shape, std::move(v));
}

}  // namespace

ParamStore init_params(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParamStore params;
  for (const auto& [name, shape] : backbone_layout(config)) {
    if (ends_with(name, ".gamma")) {
      params.set(name, Tensor::constant(shape, std::vector<double>(shape_numel(shape), 1.0)));
    } else if (ends_with(name, ".beta")) {
      params.set(name, Tensor::zeros(shape));
    } else if (ends_with(name, ".weight")) {
      params.set(name, glorot(shape, rng));
    } else {
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) x = 0.02 * rng.normal();
      params.set(name, Tensor::constant(shape, std::move(v)));
    }
  }
  return params;
}

void init_head(ParamStore& params, const ViTConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  params.set(param_names::head_weight, glorot({config.embed_dim, config.num_classes}, rng));
  params.set(param_names::head_bias, Tensor::zeros({config.num_classes}));
}

TokenSequence patch_embed(const Tensor& images, const ParamStore& params, const ViTConfig& config) {
  if (!images.defined() || images.rank() != 4 || images.dim(1) != config.image_size ||
      images.dim(2) != config.image_size || images.dim(3) != config.channels) {
    throw ConfigError("patch_embed: images " +
                      (images.defined() ? shape_str(images.shape()) : std::string("<none>")) +
                      " do not match the configured [B x " + std::to_string(config.image_size) +
                      " x " + std::to_string(config.image_size) + " x " +
                      std::to_string(config.channels) + "]");
  }
  const std::size_t B = images.dim(0);
  const Tensor patches = extract_patches(images, config.patch_size);
  Tensor tokens = linear(patches, params.get(param_names::patch_weight),
                         params.get(param_names::patch_bias));
  tokens = add_broadcast(tokens, params.get(param_names::pos_embed));
  const Tensor cls = expand_batch(params.get(param_names::cls_token), B);
  return {concat_tokens({cls, tokens}), Segments{0, config.num_patches()}};
}

TokenSequence attention(const TokenSequence& x, const BlockWeights& w, std::size_t heads,
                        const Tensor& tau, AttentionState* state) {
  const std::size_t B = x.batch(), T = x.length(), D = x.tokens.dim(2);
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(D) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t d = D / heads;
  const Tensor q = split_heads(linear(x.tokens, w.q_w, w.q_b), heads);
  const Tensor k = split_heads(linear(x.tokens, w.k_w, w.k_b), heads);
  const Tensor v = split_heads(linear(x.tokens, w.v_w, w.v_b), heads);
  const Tensor logits = mul_scalar(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  const Tensor scores = tau.defined() ? softmax_temp(logits, tau) : softmax(logits);
  const Tensor mixed = merge_heads(bmm(scores, v), heads);
  if (state) {
    state->q = reshape(q.detach(), {B, heads, T, d});
    state->k = reshape(k.detach(), {B, heads, T, d});
    state->v = reshape(v.detach(), {B, heads, T, d});
    state->scores = reshape(scores.detach(), {B, heads, T, T});
  }
  return {linear(mixed, w.proj_w, w.proj_b), x.segments};
}

TokenSequence block_forward(const TokenSequence& x, const BlockWeights& w, const ViTConfig& config,
                            const Tensor& tau, AttentionState* state) {
  const double eps = config.ln_eps;
  const TokenSequence normed{layer_norm(x.tokens, w.ln1_gamma, w.ln1_beta, eps), x.segments};
  const Tensor h = add(x.tokens, attention(normed, w, config.num_heads, tau, state).tokens);
  const Tensor hidden = gelu(linear(layer_norm(h, w.ln2_gamma, w.ln2_beta, eps), w.fc1_w, w.fc1_b));
  return {add(h, linear(hidden, w.fc2_w, w.fc2_b)), x.segments};
}

Tensor head_forward(const TokenSequence& x, const ParamStore& params, const ViTConfig& config) {
  const std::size_t B = x.batch(), D = x.tokens.dim(2);
  const Tensor cls = reshape(slice_tokens(x.tokens, 0, 1), {B, D});
  const Tensor normed = layer_norm(cls, params.get(param_names::norm_gamma),
                                   params.get(param_names::norm_beta), config.ln_eps);
  return linear(normed, params.get(param_names::head_weight), params.get(param_names::head_bias));
}

Tensor vit_forward(const Tensor& images, const ParamStore& params, const ViTConfig& config,
                   const TemperatureBank& temps) {
  config.validate();
  if (temps.size() != config.num_blocks) {
    throw ConfigError("vit_forward: " + std::to_string(temps.size()) + " temperatures for " +
                      std::to_string(config.num_blocks) + " blocks");
  }
  TokenSequence x = patch_embed(images, params, config);
  for (std::size_t l = 0; l < config.num_blocks; ++l)
    x = block_forward(x, BlockWeights::from(params, l), config, temps.tau(l));
  return head_forward(x, params, config);
}

}  // namespace gpvit
