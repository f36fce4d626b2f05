#include "gpvit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "gpvit/analysis.hpp"
#include "gpvit/errors.hpp"
#include "gpvit/prompts.hpp"
#include "gpvit/rng.hpp"

namespace gpvit {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive number");
  }
  if (!allow_off_grid_lr &&
      std::find(kLearningRateGrid.begin(), kLearningRateGrid.end(), learning_rate) ==
          kLearningRateGrid.end()) {
    auto brief = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", v);
      return std::string(buf);
    };
    std::string grid;
    for (double lr : kLearningRateGrid) grid += (grid.empty() ? "" : ", ") + brief(lr);
    throw ConfigError("learning_rate " + brief(learning_rate) +
                      " is not in the search grid {" + grid +
                      "}; set allow_off_grid_lr to use it anyway");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

std::string RunMetrics::csv(const std::string& fingerprint) const {
  std::string out = "# config_fingerprint=" + fingerprint + "\n";
  out += "epoch,split,loss,accuracy\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + r.split + "," + format_number(r.loss) + "," +
           format_number(r.accuracy) + "\n";
  }
  return out;
}

void sgd_step(ParamStore& params, const GradMap& grads, const TrainableMask& mask, double lr,
              double momentum, VelocityState& velocity) {
  for (const auto& name : mask) {
    auto g = grads.find(name);
    if (g == grads.end()) throw StateError("sgd_step: no gradient for trainable '" + name + "'");
    const Tensor& p = params.get(name);
    if (g->second.size() != p.numel()) {
      throw StateError("sgd_step: gradient of '" + name + "' has the wrong size");
    }
    auto& v = velocity[name];
    if (v.empty()) v.assign(p.numel(), 0.0);
    std::vector<double> next(p.values().begin(), p.values().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      v[i] = momentum * v[i] + g->second[i];
      next[i] -= lr * v[i];
    }
    params.set(name, Tensor::constant(p.shape(), std::move(next)));
  }
}

namespace {

std::size_t count_correct(const Tensor& logits, std::span<const std::int32_t> labels) {
  const std::size_t C = logits.dim(1);
  auto v = logits.values();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = v.data() + i * C;
    const auto pred = std::max_element(row, row + C) - row;
    correct += pred == labels[i] ? 1 : 0;
  }
  return correct;
}

void check_data(const LabeledDataset& data, const ViTConfig& config, const char* what) {
  data.validate();
  if (data.image_size() != config.image_size || data.channels() != config.channels) {
    throw ConfigError(std::string(what) + " images are " + shape_str(data.images.shape()) +
                      " but the model expects " + std::to_string(config.image_size) + "x" +
                      std::to_string(config.image_size) + "x" + std::to_string(config.channels));
  }
  if (data.classes != config.num_classes) {
    throw ConfigError(std::string(what) + " has " + std::to_string(data.classes) +
                      " classes but the model head has " + std::to_string(config.num_classes));
  }
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

}  // namespace

EvalResult evaluate(const ParamStore& params, const ViTConfig& config, const TuningSetup& tuning,
                    const LabeledDataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw ConfigError("evaluate: dataset is empty");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
  check_data(data, config, "evaluation set");
  const ParamStore frozen = params.frozen();
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const LabeledDataset batch = data.subset(range(b, std::min(data.size(), b + batch_size)));
    const Tensor logits = model_forward(batch.images, frozen, config, tuning);
    loss_sum += cross_entropy(logits, batch.labels).item() * static_cast<double>(batch.size());
    correct += count_correct(logits, batch.labels);
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss_sum / n};
}

Checkpoint prepare_tuning(const ParamStore& backbone, const ViTConfig& config,
                          const TuningSetup& tuning, std::uint64_t seed) {
  config.validate();
  tuning.validate(config);
  Checkpoint ck;
  ck.config = config;
  ck.tuning = tuning;
  ck.seed = seed;
  for (const auto& [name, t] : backbone.items())
    if (is_backbone_param(name)) ck.params.set(name, t);
  init_tuning_params(ck.params, config, tuning, seed);
  ck.trainable = build_trainable_mask(config, tuning);
  check_compatible(ck, config);
  return ck;
}

TrainResult train(const TrainConfig& config, const Checkpoint& start, const LabeledDataset& train_set,
                  const LabeledDataset* val_set) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  start.config.validate();
  start.tuning.validate(start.config);
  check_data(train_set, start.config, "training set");
  if (val_set) check_data(*val_set, start.config, "validation set");

  const ViTConfig& model = start.config;
  const TuningSetup& tuning = start.tuning;
  const TrainableMask& mask = start.trainable;
  ParamStore params = start.params;
  VelocityState velocity;
  Rng order_rng(derive_seed(config.seed, 11));
  Rng gate_rng(derive_seed(config.seed, 12));
  std::vector<std::size_t> order = range(0, train_set.size());
  const double n = static_cast<double>(train_set.size());

  TrainResult result;
  RunMetrics& metrics = result.metrics;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0, step = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size, ++step) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(b),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + config.batch_size)));
      const LabeledDataset batch = train_set.subset(idx);
      const std::string where =
          "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
      try {
        const ParamStore live = params.with_trainable(mask);
        ForwardOptions opts;
        opts.training = true;
        opts.rng = &gate_rng;
        const Tensor logits = model_forward(batch.images, live, model, tuning, opts);
        const Tensor loss = cross_entropy(logits, batch.labels);
        if (!std::isfinite(loss.item())) throw NumericError("loss is " + format_number(loss.item()));
        backward(loss);
        GradMap grads;
        for (const auto& name : mask) {
          const Tensor& t = live.get(name);
          if (t.has_grad()) grads[name].assign(t.grad().begin(), t.grad().end());
        }
        sgd_step(params, grads, mask, config.learning_rate, config.momentum, velocity);
        loss_sum += loss.item() * static_cast<double>(batch.size());
        correct += count_correct(logits, batch.labels);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at " + where + ": " + e.what());
      }
    }
    metrics.rows.push_back({epoch, "train", loss_sum / n, static_cast<double>(correct) / n});
    const bool eval_now =
        epoch == config.epochs || (config.eval_every != 0 && epoch % config.eval_every == 0);
    if (val_set && eval_now) {
      const EvalResult r = evaluate(params, model, tuning, *val_set);
      metrics.rows.push_back({epoch, "val", r.loss, r.accuracy});
    }
  }

  const EvalResult final_train = evaluate(params, model, tuning, train_set);
  metrics.rows.push_back({config.epochs, "train_eval", final_train.loss, final_train.accuracy});
  metrics.final_train_accuracy = final_train.accuracy;
  metrics.final_train_loss = final_train.loss;
  if (tuning.mode == PromptMode::gated) {
    metrics.final_gates = gate_numbers(GateBank::from_params(params, tuning, model.num_blocks));
  }
  const TemperatureBank temps = TemperatureBank::from_params(params, model.num_blocks);
  for (std::size_t l = 0; l < model.num_blocks; ++l) metrics.final_temperatures.push_back(temps.tau(l).item());

  const FreezeReport freeze = assert_frozen(start.params, params, mask);
  if (!freeze.ok()) {
    throw StateError("frozen parameter changed during training: " + freeze.violations.front());
  }

  result.checkpoint = start;
  result.checkpoint.params = std::move(params);
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

std::string to_string(GateVariant v) {
  switch (v) {
    case GateVariant::soft: return "soft";
    case GateVariant::hard: return "hard";
    case GateVariant::open: return "open";
  }
  return "?";
}

GateVariant parse_gate_variant(const std::string& name) {
  if (name == "soft") return GateVariant::soft;
  if (name == "hard") return GateVariant::hard;
  if (name == "open") return GateVariant::open;
  throw ConfigError("unknown gate variant '" + name + "' (expected soft, hard or open)");
}

std::string AblationCell::label() const {
  return to_string(mode) + (attention_shaping ? "+lt" : "") + "/" + to_string(gate);
}

TuningSetup AblationCell::tuning(const TuningSetup& base) const {
  TuningSetup t = base;
  t.mode = mode;
  t.attention_shaping = attention_shaping;
  if (mode != PromptMode::gated) {
    // Gate settings are irrelevant here; normalize them so equal cells merge.
    const TuningSetup defaults;
    t.gate_mode = defaults.gate_mode;
    t.gate_init = defaults.gate_init;
    t.fixed_gate = defaults.fixed_gate;
    t.gumbel_temperature = defaults.gumbel_temperature;
    return t;
  }
  switch (gate) {
    case GateVariant::soft: t.gate_mode = GateMode::soft; break;
    case GateVariant::hard: t.gate_mode = GateMode::hard; break;
    case GateVariant::open:
      t.gate_mode = GateMode::fixed;
      t.fixed_gate = 1.0;
      break;
  }
  return t;
}

std::vector<AblationCell> AblationGrid::cells() const {
  std::vector<AblationCell> out;
  for (PromptMode m : modes)
    for (bool s : attention_shaping)
      for (GateVariant g : gates) out.push_back({m, s, g});
  return out;
}

std::string dataset_hash(const LabeledDataset& ds) {
  const std::string bytes = dataset_bytes(ds);
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const TrainConfig& config,
                                      const TuningSetup& base, const ViTConfig& model,
                                      const ParamStore& backbone, const LabeledDataset& train_set,
                                      const LabeledDataset* val_set, int threads) {
  const std::vector<AblationCell> cells = grid.cells();
  if (cells.empty()) throw ConfigError("ablation grid is empty");

  std::vector<TuningSetup> unique;
  std::vector<std::size_t> which(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const TuningSetup t = cells[i].tuning(base);
    auto it = std::find(unique.begin(), unique.end(), t);
    which[i] = static_cast<std::size_t>(it - unique.begin());
    if (it == unique.end()) unique.push_back(t);
  }

  std::vector<TrainResult> results(unique.size());
  std::vector<std::exception_ptr> errors(unique.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(unique.size())));
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
  for (std::int64_t u = 0; u < static_cast<std::int64_t>(unique.size()); ++u) {
    try {
      const Checkpoint start = prepare_tuning(backbone, model, unique[u], config.seed);
      results[u] = train(config, start, train_set, val_set);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  TrainableMask backbone_names;
  for (const auto& name : backbone.names())
    if (is_backbone_param(name)) backbone_names.insert(name);
  const std::string data = dataset_hash(train_set);

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const TrainResult& r = results[which[i]];
    AblationRow row;
    row.cell = cells[i];
    row.metrics = r.metrics;
    row.val_accuracy = std::numeric_limits<double>::quiet_NaN();
    for (const auto& m : r.metrics.rows)
      if (m.split == "val") row.val_accuracy = m.accuracy;
    row.trainable_scalars = r.checkpoint.params.scalar_count(r.checkpoint.trainable);
    row.backbone_hash = hex64(r.checkpoint.params.fingerprint(&backbone_names));
    row.data_hash = data;
    row.checkpoint_hash = hex64(r.checkpoint.params.fingerprint());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& fingerprint,
                         std::uint64_t seed) {
  std::string out =
      "cell,mode,attention_shaping,gate,seed,config_fingerprint,backbone_hash,data_hash,"
      "trainable_scalars,final_train_loss,final_train_accuracy,val_accuracy,checkpoint_hash\n";
  for (const auto& r : rows) {
    out += r.cell.label() + "," + to_string(r.cell.mode) + "," +
           (r.cell.attention_shaping ? "on" : "off") + "," + to_string(r.cell.gate) + "," +
           std::to_string(seed) + "," + fingerprint + "," + r.backbone_hash + "," + r.data_hash +
           "," + std::to_string(r.trainable_scalars) + "," +
           format_number(r.metrics.final_train_loss) + "," +
           format_number(r.metrics.final_train_accuracy) + "," +
           (std::isnan(r.val_accuracy) ? std::string("nan") : format_number(r.val_accuracy)) +
           "," + r.checkpoint_hash + "\n";
  }
  return out;
}

}  // namespace gpvit
