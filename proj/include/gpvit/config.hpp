#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpvit/dataset.hpp"
#include "gpvit/trainer.hpp"
#include "gpvit/tuning.hpp"
#include "gpvit/vit.hpp"

namespace gpvit {

// A run is described by one YAML document:
//
//   seed: 0
//   output_dir: runs/toy
//   model:     {image_size, channels, patch_size, embed_dim, num_blocks,
//               num_heads, mlp_ratio, num_classes, ln_eps}
//   backbone:  {seed, checkpoint}        checkpoint wins when non-empty
//   tuning:    {mode, num_prompts, gate_mode, gate_init, fixed_gate,
//               gumbel_temperature, attention_shaping}
//   train:     {learning_rate, momentum, batch_size, epochs, eval_every,
//               allow_off_grid_lr}
//   dataset:   {path, val_fraction, synthetic: {seed, n, classes, depth, noise}}
//   compare:   {modes, attention_shaping, gates}
//   gradcheck: {max_params, batch_size, step, tolerance}
//
// Every section and key is optional; defaults are the toy setup. Unknown keys
// are errors.

struct BackboneSource {
  std::uint64_t seed = 0;          // random frozen backbone
  std::filesystem::path checkpoint;  // or the backbone params of a checkpoint
  bool operator==(const BackboneSource&) const = default;
};

struct DatasetSource {
  std::filesystem::path path = "data/toy.gpvd";
  double val_fraction = 0.0;  // 0: no validation split
  /// What gen-data writes to `path`; image geometry and class count come
  /// from the model section.
  DepthSelectiveSpec synthetic;
};

struct GradCheckSettings {
  std::size_t max_params = 5000;
  std::size_t batch_size = 2;
  double step = 1e-4;
  double tolerance = 1e-4;
  bool operator==(const GradCheckSettings&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  ViTConfig model;
  BackboneSource backbone;
  TuningSetup tuning;
  TrainConfig train;
  DatasetSource dataset;
  AblationGrid compare{{PromptMode::shallow, PromptMode::deep, PromptMode::gated},
                       {true, false},
                       {GateVariant::soft}};
  GradCheckSettings gradcheck;

  /// Cross-field checks (model, tuning, training, dataset shape).
  void validate() const;
  /// `train` with the run seed filled in.
  TrainConfig train_config() const;
  /// Canonical YAML with every field spelled out.
  std::string to_yaml() const;
  /// Hash of `to_yaml()` with the output directory left out, so moving a
  /// run does not change its identity. 16 hex digits.
  std::string fingerprint() const;
};

/// ConfigError naming the offending key and its line on unknown keys, wrong
/// types and invalid values.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
/// IoError when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

/// Frozen backbone for `config`: loaded from the checkpoint or freshly
/// initialized from the backbone seed.
ParamStore resolve_backbone(const RunConfig& config);

}  // namespace gpvit
