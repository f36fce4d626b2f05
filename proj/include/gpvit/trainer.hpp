#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gpvit/checkpoint.hpp"
#include "gpvit/dataset.hpp"
#include "gpvit/params.hpp"
#include "gpvit/tuning.hpp"
#include "gpvit/vit.hpp"

namespace gpvit {

/// Learning rates searched for prompt tuning with SGD.
inline constexpr std::array<double, 7> kLearningRateGrid = {0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0};

struct TrainConfig {
  double learning_rate = 0.25;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  /// Validation every this many epochs (0: only after the last one).
  std::size_t eval_every = 1;
  /// Off-grid learning rates are refused unless this is set.
  bool allow_off_grid_lr = false;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;  // "train" (running, during the epoch), "val", "train_eval"
  double loss = 0.0;
  double accuracy = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> rows;
  std::vector<double> final_gates;         // inference-time gate values
  std::vector<double> final_temperatures;  // τ per block
  double final_train_accuracy = 0.0;
  double final_train_loss = 0.0;
  double wall_seconds = 0.0;  // not part of any deterministic output

  /// `epoch,split,loss,accuracy` after a `# config_fingerprint=` line.
  std::string csv(const std::string& fingerprint) const;
};

using GradMap = std::map<std::string, std::vector<double>>;
using VelocityState = std::map<std::string, std::vector<double>>;

/// v ← μ·v + g, p ← p − lr·v for every name in `mask`; everything else is
/// left untouched. Throws StateError when a masked parameter has no gradient.
void sgd_step(ParamStore& params, const GradMap& grads, const TrainableMask& mask, double lr,
              double momentum, VelocityState& velocity);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Inference-mode accuracy and mean cross-entropy. Throws ConfigError on an
/// empty or mismatched dataset.
EvalResult evaluate(const ParamStore& params, const ViTConfig& config, const TuningSetup& tuning,
                    const LabeledDataset& data, std::size_t batch_size = 100);

/// Backbone plus freshly initialized tuning parameters, with the trainable
/// mask the tuning setup implies.
Checkpoint prepare_tuning(const ParamStore& backbone, const ViTConfig& config,
                          const TuningSetup& tuning, std::uint64_t seed);

struct TrainResult {
  Checkpoint checkpoint;
  RunMetrics metrics;
};

/// Mini-batch SGD on the trainable parameters of `start`. Deterministic in
/// (config, start, data). Throws NumericError naming the epoch and step on a
/// non-finite loss, and StateError if a frozen parameter changed.
TrainResult train(const TrainConfig& config, const Checkpoint& start, const LabeledDataset& train_set,
                  const LabeledDataset* val_set = nullptr);

// Ablation grid.

enum class GateVariant { soft, hard, open };  // open: every gate fixed to 1
std::string to_string(GateVariant v);
GateVariant parse_gate_variant(const std::string& name);

struct AblationCell {
  PromptMode mode = PromptMode::gated;
  bool attention_shaping = true;
  GateVariant gate = GateVariant::soft;

  std::string label() const;
  /// Tuning setup this cell trains; the gate variant only matters in gated mode.
  TuningSetup tuning(const TuningSetup& base) const;
};

struct AblationGrid {
  std::vector<PromptMode> modes;
  std::vector<bool> attention_shaping;
  std::vector<GateVariant> gates;

  /// Full product in (mode, shaping, gate) order.
  std::vector<AblationCell> cells() const;
};

struct AblationRow {
  AblationCell cell;
  RunMetrics metrics;
  double val_accuracy = 0.0;  // NaN without a validation set
  std::size_t trainable_scalars = 0;
  std::string backbone_hash;
  std::string data_hash;
  std::string checkpoint_hash;
};

/// Trains every cell from the same backbone, data and seed. Cells with an
/// identical effective setup are trained once. Up to `threads` cells run
/// concurrently; results do not depend on it.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const TrainConfig& config,
                                      const TuningSetup& base, const ViTConfig& model,
                                      const ParamStore& backbone, const LabeledDataset& train_set,
                                      const LabeledDataset* val_set, int threads = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& fingerprint,
                         std::uint64_t seed);

/// Hash of the serialized dataset.
std::string dataset_hash(const LabeledDataset& ds);

}  // namespace gpvit
