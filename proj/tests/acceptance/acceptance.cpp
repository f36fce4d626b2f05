// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Paths to the source tree and the CLI come from the build.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gpvit/analysis.hpp"
#include "gpvit/checkpoint.hpp"
#include "gpvit/config.hpp"
#include "gpvit/dataset.hpp"
#include "gpvit/errors.hpp"
#include "gpvit/files.hpp"
#include "gpvit/gradcheck.hpp"
#include "gpvit/prompts.hpp"
#include "gpvit/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gpvit;

namespace {

const fs::path kSource = GPVIT_SOURCE_DIR;
const fs::path kCli = GPVIT_CLI;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<double> uniform_values(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor images_for(const ViTConfig& c, std::size_t batch, Rng& rng) {
  return Tensor::constant({batch, c.image_size, c.image_size, c.channels},
                          uniform_values(batch * c.image_size * c.image_size * c.channels, rng,
                                         -1.0, 1.0));
}

bool bits_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

RunConfig toy_run() { return load_run_config(kSource / "configs" / "toy.yaml"); }

TuningSetup gated_tuning(const RunConfig& rc) {
  TuningSetup t = rc.tuning;
  t.mode = PromptMode::gated;
  return t;
}

/// Toy backbone with fresh gated tuning parameters; prompts and priors are
/// re-drawn so every instance exercises a different point.
ParamStore toy_instance(const RunConfig& rc, std::uint64_t seed, Rng& rng) {
  ParamStore p = init_params(rc.model, rc.backbone.seed);
  init_tuning_params(p, rc.model, gated_tuning(rc), seed);
  for (std::size_t l = 0; l + 1 < rc.model.num_blocks; ++l)
    p.set(param_names::gate_prior(l), Tensor::constant({1}, {rng.uniform(-4.0, 4.0)}));
  for (std::size_t l = 0; l < rc.model.num_blocks; ++l)
    p.set(param_names::temperature(l), Tensor::constant({1}, {rng.uniform(-0.5, 0.5)}));
  return p;
}

GateBank hard_inference_bank(const std::vector<int>& pattern) {
  GateBank g;
  g.count = pattern.size();
  g.mode = GateMode::hard;
  for (int v : pattern) g.priors.push_back(Tensor::scalar(v ? 6.0 : -6.0));
  return g;
}

// ---------------------------------------------------------------------------

Outcome ac1_gradient_check() {
  const RunConfig rc = toy_run();
  const TuningSetup t = gated_tuning(rc);
  ParamStore p = init_params(rc.model, rc.backbone.seed);
  init_tuning_params(p, rc.model, t, 1);
  // Priors near zero so gate gradients are not saturated away.
  Rng rng(101);
  for (std::size_t l = 0; l + 1 < rc.model.num_blocks; ++l)
    p.set(param_names::gate_prior(l), Tensor::constant({1}, {rng.uniform(-1.0, 1.0)}));
  const Tensor x = images_for(rc.model, rc.gradcheck.batch_size, rng);
  std::vector<std::int32_t> y;
  for (std::size_t i = 0; i < rc.gradcheck.batch_size; ++i)
    y.push_back(static_cast<std::int32_t>(rng.below(rc.model.num_classes)));

  const TrainableMask mask = build_trainable_mask(rc.model, t);
  GradCheckOptions opts;
  opts.step = rc.gradcheck.step;
  opts.tolerance = 1e-4;
  const GradCheckReport r = finite_diff_check(
      [&](const ParamStore& s) { return cross_entropy(model_forward(x, s, rc.model, t), y); }, p,
      {mask.begin(), mask.end()}, opts);
  const std::size_t expected = p.scalar_count(mask);
  const bool complete = r.entries.size() == expected;
  std::ostringstream d;
  d << r.entries.size() << "/" << expected << " trainable scalars, " << r.failures()
    << " failures, max rel error " << fmt("%.3g", r.max_rel_error) << " (tol 1e-4)";
  return {r.passed && complete, d.str()};
}

Outcome ac2_degenerate_gates() {
  const RunConfig rc = toy_run();
  const ViTConfig& c = rc.model;
  Rng rng(202);
  std::size_t identical = 0;
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const ParamStore p = toy_instance(rc, 1000 + i, rng);
    const PromptSet prompts = PromptSet::from_params(p, PromptMode::gated, c.num_blocks);
    const TemperatureBank temps = TemperatureBank::from_params(p, c.num_blocks);
    const Tensor x = images_for(c, 1, rng);
    const Tensor a = gated_forward(x, p, c, prompts, GateBank::fixed(c.num_blocks, 1.0), temps);
    const Tensor b = vpt_shallow_forward(x, p, c, prompts, temps);
    identical += bits_equal(a.values(), b.values());
    worst = std::max(worst, max_abs_diff(a.values(), b.values()));
  }
  return {worst <= 1e-12, std::to_string(identical) + "/100 bit-identical, max |diff| " +
                              fmt("%.3g", worst)};
}

Outcome ac3_aggregation_identity() {
  const RunConfig rc = toy_run();
  const ViTConfig& c = rc.model;
  Rng rng(303);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const ParamStore p = toy_instance(rc, 2000 + i, rng);
    const GateBank gates = GateBank::from_params(p, gated_tuning(rc), c.num_blocks);
    PromptTrace trace;
    ForwardOptions opts;
    opts.trace = &trace;
    gated_forward(images_for(c, 2, rng), p, c,
                  PromptSet::from_params(p, PromptMode::gated, c.num_blocks), gates,
                  TemperatureBank::from_params(p, c.num_blocks), opts);
    const Tensor agg = closed_form_aggregate(trace, gate_numbers(gates));
    worst = std::max(worst, max_abs_diff(agg.values(), trace.blocks.back().input.values()));
  }
  return {worst <= 1e-10, "100 instances, max |closed form - sequential| " + fmt("%.3g", worst)};
}

Outcome ac4_selection_ratio() {
  Rng rng(404);
  double worst_sum = 0.0, min_r = 1.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(11);
    auto g = uniform_values(n, rng, 0.0, 1.0);
    if (i % 10 == 0) g[rng.below(n)] = 1.0;  // include saturated gates
    const auto r = selection_ratio(accumulated_weights(g));
    double s = 0.0;
    for (double v : r) {
      s += v;
      min_r = std::min(min_r, v);
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  const auto r = selection_ratio(accumulated_weights(std::vector<double>{0.5, 0.5, 0.5}));
  const double hand = std::max({std::abs(r[0] - 1.0 / 7), std::abs(r[1] - 2.0 / 7),
                                std::abs(r[2] - 4.0 / 7)});
  return {min_r >= 0.0 && worst_sum <= 1e-10 && hand <= 1e-12,
          "1000 vectors, min r " + fmt("%.3g", min_r) + ", max |sum-1| " +
              fmt("%.3g", worst_sum) + "; [0.5,0.5,0.5] off by " + fmt("%.3g", hand)};
}

Outcome ac5_skip_invariance() {
  const RunConfig rc = toy_run();
  const ViTConfig& c = rc.model;
  Rng rng(505);
  double worst = 0.0;
  std::size_t checks = 0;
  for (std::size_t closed = 0; closed + 1 < c.num_blocks; ++closed) {
    for (int trial = 0; trial < 5; ++trial) {
      const ParamStore p = toy_instance(rc, 3000 + 10 * closed + trial, rng);
      std::vector<int> pattern(c.num_blocks - 1);
      for (int& v : pattern) v = static_cast<int>(rng.below(2));
      pattern[closed] = 0;
      PromptTrace trace;
      ForwardOptions opts;
      opts.trace = &trace;
      gated_forward(images_for(c, 2, rng), p, c,
                    PromptSet::from_params(p, PromptMode::gated, c.num_blocks),
                    hard_inference_bank(pattern), TemperatureBank::from_params(p, c.num_blocks),
                    opts);
      if (trace.blocks[closed].gate != 0.0) return {false, "gate was not closed"};
      worst = std::max(worst, max_abs_diff(trace.blocks[closed + 1].input.values(),
                                           trace.blocks[closed].input.values()));
      ++checks;
    }
  }
  return {worst <= 1e-12, std::to_string(checks) + " closed gates over every gated block, max |diff| " +
                              fmt("%.3g", worst)};
}

Outcome ac6_temperature() {
  const RunConfig rc = toy_run();
  const ViTConfig& c = rc.model;
  Rng rng(606);
  const ParamStore p = init_params(c, rc.backbone.seed);
  bool unit_exact = true, argmax_stable = true;
  double worst_uniform = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    TokenSequence x = patch_embed(images_for(c, 2, rng), p, c);
    for (std::size_t l = 0; l < c.num_blocks; ++l) {
      const BlockWeights w = BlockWeights::from(p, l);
      AttentionState plain, unit, hot;
      const TokenSequence y0 = attention(x, w, c.num_heads, Tensor(), &plain);
      const TokenSequence y1 = attention(x, w, c.num_heads, Tensor::scalar(1.0), &unit);
      unit_exact &= bits_equal(y0.tokens.values(), y1.tokens.values()) &&
                    bits_equal(plain.scores.values(), unit.scores.values());
      attention(x, w, c.num_heads, Tensor::scalar(1e6), &hot);
      const std::size_t T = x.segments.total();
      for (double a : hot.scores.values())
        worst_uniform = std::max(worst_uniform, std::abs(a - 1.0 / static_cast<double>(T)));

      std::vector<std::vector<std::size_t>> argmax;
      for (double tau : {0.25, 1.0, 4.0}) {
        AttentionState st;
        attention(x, w, c.num_heads, Tensor::scalar(tau), &st);
        const auto s = st.scores.values();
        std::vector<std::size_t> am;
        for (std::size_t r = 0; r < s.size() / T; ++r)
          am.push_back(static_cast<std::size_t>(
              std::max_element(s.begin() + r * T, s.begin() + (r + 1) * T) - (s.begin() + r * T)));
        argmax.push_back(std::move(am));
      }
      argmax_stable &= argmax[0] == argmax[1] && argmax[1] == argmax[2];
      x = block_forward(x, w, c, Tensor());
    }
  }
  return {unit_exact && argmax_stable && worst_uniform <= 1e-4,
          std::string("tau=1 ") + (unit_exact ? "bit-exact" : "DIFFERS") +
              ", tau=1e6 max |a-1/T| " + fmt("%.3g", worst_uniform) + ", argmax " +
              (argmax_stable ? "invariant" : "CHANGED") + " over {0.25,1,4}"};
}

Outcome ac9_hard_gates() {
  Rng rng(909);
  GateBank g;
  g.count = 5;
  g.mode = GateMode::hard;
  for (int i = 0; i < 5; ++i) g.priors.push_back(Tensor::scalar(rng.uniform(-3.0, 3.0)));
  bool binary = true;
  for (int i = 0; i < 2000; ++i)
    for (const Tensor& v : gate_values(g, true, &rng)) binary &= v.item() == 0.0 || v.item() == 1.0;

  // Binary values also inside a full hard-gated training forward.
  const RunConfig rc = toy_run();
  TuningSetup t = gated_tuning(rc);
  t.gate_mode = GateMode::hard;
  t.gate_init = 0.0;
  ParamStore p = init_params(rc.model, rc.backbone.seed);
  init_tuning_params(p, rc.model, t, 3);
  for (int i = 0; i < 20; ++i) {
    PromptTrace trace;
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &rng;
    opts.trace = &trace;
    model_forward(images_for(rc.model, 1, rng), p, rc.model, t, opts);
    for (const auto& e : trace.blocks)
      if (e.gated) binary &= e.gate == 0.0 || e.gate == 1.0;
  }

  GateBank zero;
  zero.count = 1;
  zero.mode = GateMode::hard;
  zero.priors = {Tensor::scalar(0.0)};
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) sum += gate_values(zero, true, &rng)[0].item();
  const double mean = sum / 10000.0;

  bool deterministic = true;
  for (int i = 0; i < 100; ++i) {
    GateBank b = g;
    for (auto& prior : b.priors) prior = Tensor::scalar(rng.uniform(-3.0, 3.0));
    const auto first = gate_numbers(b), second = gate_numbers(b);
    deterministic &= first == second;
    for (std::size_t l = 0; l < first.size(); ++l)
      deterministic &= first[l] == (b.priors[l].item() > 0.0 ? 1.0 : 0.0);
  }
  return {binary && deterministic && mean >= 0.45 && mean <= 0.55,
          std::string("training gates ") + (binary ? "binary" : "NOT binary") +
              ", mean at gamma=0 over 10000 = " + fmt("%.4f", mean) + ", inference " +
              (deterministic ? "deterministic" : "NOT deterministic")};
}

template <typename E, typename F>
bool throws_exactly(F&& f, const char*& caught) {
  try {
    f();
  } catch (const MagicError&) {
    caught = "MagicError";
    return std::is_same_v<E, MagicError>;
  } catch (const TruncationError&) {
    caught = "TruncationError";
    return std::is_same_v<E, TruncationError>;
  } catch (const ShapeError&) {
    caught = "ShapeError";
    return std::is_same_v<E, ShapeError>;
  } catch (const CorruptionError&) {
    caught = "CorruptionError";
    return std::is_same_v<E, CorruptionError>;
  } catch (const std::exception&) {
    caught = "other";
    return false;
  }
  caught = "nothing";
  return false;
}

Outcome ac10_persistence(const fs::path& work) {
  const RunConfig rc = toy_run();
  Checkpoint ck = prepare_tuning(init_params(rc.model, 0), rc.model, rc.tuning, 1);
  ck.seed = 1;
  ck.fingerprint = rc.fingerprint();
  const fs::path ck_path = work / "persist.gpvc";
  save_checkpoint(ck_path, ck);
  const Checkpoint back = load_checkpoint(ck_path);
  bool ck_exact = back.config == ck.config && back.tuning == ck.tuning &&
                  back.trainable == ck.trainable && checkpoint_bytes(back) == read_file(ck_path);
  for (const auto& name : ck.params.names())
    ck_exact &= bits_equal(back.params.get(name).values(), ck.params.get(name).values());

  DepthSelectiveSpec spec = rc.dataset.synthetic;
  spec.n = 50;
  const LabeledDataset ds = generate_depth_selective(spec);
  const fs::path ds_path = work / "persist.gpvd";
  save_dataset(ds_path, ds);
  const LabeledDataset ds_back = load_dataset(ds_path);
  const bool ds_exact = ds_back.labels == ds.labels &&
                        bits_equal(ds_back.images.values(), ds.images.values()) &&
                        dataset_bytes(ds_back) == read_file(ds_path);

  const std::string ck_bytes = read_file(ck_path), ds_bytes = read_file(ds_path);
  std::string bad_magic = ck_bytes;
  bad_magic[0] ^= 0x20;
  std::string bad_ds_magic = ds_bytes;
  bad_ds_magic[0] ^= 0x20;

  // Shape: a checkpoint whose head disagrees with its own config, and a
  // dataset whose dims header disagrees with its payload.
  Checkpoint wrong = ck;
  wrong.params.set(param_names::head_weight, Tensor::zeros({rc.model.embed_dim, 7}));
  const std::string wrong_bytes = checkpoint_bytes(wrong);
  std::string bad_dims = ds_bytes;
  const std::size_t n_offset = 8 + 4 + 4 + ds.split.size();
  bad_dims[n_offset] = static_cast<char>(49);

  const char* c1 = "";
  const char* c2 = "";
  const char* c3 = "";
  const char* d1 = "";
  const char* d2 = "";
  const char* d3 = "";
  const bool errors =
      throws_exactly<MagicError>([&] { checkpoint_from_bytes(bad_magic); }, c1) &&
      throws_exactly<TruncationError>(
          [&] { checkpoint_from_bytes(ck_bytes.substr(0, ck_bytes.size() / 2)); }, c2) &&
      throws_exactly<ShapeError>([&] { checkpoint_from_bytes(wrong_bytes); }, c3) &&
      throws_exactly<MagicError>([&] { dataset_from_bytes(bad_ds_magic); }, d1) &&
      throws_exactly<TruncationError>(
          [&] { dataset_from_bytes(ds_bytes.substr(0, ds_bytes.size() - 3)); }, d2) &&
      throws_exactly<CorruptionError>([&] { dataset_from_bytes(bad_dims); }, d3);
  return {ck_exact && ds_exact && errors,
          std::string("round trips ") + (ck_exact && ds_exact ? "bit-exact" : "DIFFER") +
              "; checkpoint magic/truncation/shape -> " + c1 + "/" + c2 + "/" + c3 +
              "; dataset -> " + d1 + "/" + d2 + "/" + d3};
}

// The learning-sanity setup: tests/acceptance/learning_sanity.yaml must agree
// with the frozen baseline file on task, lr and budget.
struct ToyTraining {
  RunConfig rc;
  LabeledDataset data;
  ParamStore backbone;
  double lr = 0.0;
  double gated_min = 0.0;
  double shallow_min = 0.0;
  std::size_t epochs = 0;
};

const fs::path kSanityConfig = kSource / "tests" / "acceptance" / "learning_sanity.yaml";

ToyTraining toy_training() {
  ToyTraining t;
  t.rc = load_run_config(kSanityConfig);
  const auto baseline =
      nlohmann::json::parse(read_file(kSource / "baselines" / "learning_sanity.json"));
  t.lr = baseline.at("learning_rate").get<double>();
  t.epochs = baseline.at("epochs").get<std::size_t>();
  t.gated_min = baseline.at("gated_min_train_accuracy").get<double>();
  t.shallow_min = baseline.at("shallow_min_train_accuracy").get<double>();
  const auto& task = baseline.at("task");
  const auto& s = t.rc.dataset.synthetic;
  if (t.rc.train.learning_rate != t.lr || t.rc.train.epochs != t.epochs ||
      t.rc.train.allow_off_grid_lr || t.rc.dataset.val_fraction != 0.0 ||
      t.rc.tuning.mode != PromptMode::gated || s.seed != task.at("synthetic_seed").get<std::uint64_t>() ||
      s.n != task.at("n").get<std::size_t>() || s.classes != task.at("classes").get<std::size_t>() ||
      s.depth != task.at("depth").get<std::size_t>() || s.noise != task.at("noise").get<double>()) {
    throw ConfigError(kSanityConfig.string() + " disagrees with baselines/learning_sanity.json");
  }
  t.data = generate_depth_selective(s);
  t.backbone = init_params(t.rc.model, t.rc.backbone.seed);
  return t;
}

// Two full CLI training runs from one generated dataset file.
struct CliRuns {
  fs::path a, b;
  double seconds_a = 0.0;
  std::string error;
};

CliRuns cli_runs(const fs::path& work) {
  CliRuns r;
  r.a = work / "run_a";
  r.b = work / "run_b";
  const auto run = [&](const std::string& args) {
    const std::string cmd = "cd \"" + work.string() + "\" && \"" + kCli.string() + "\" " + args +
                            " --config \"" + kSanityConfig.string() + "\" > /dev/null";
    return std::system(cmd.c_str());
  };
  if (run("gen-data") != 0) {
    r.error = "gen-data failed";
    return r;
  }
  const auto t0 = std::chrono::steady_clock::now();
  if (run("train --out run_a") != 0) {
    r.error = "first train run failed";
    return r;
  }
  r.seconds_a = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (run("train --out run_b") != 0) r.error = "second train run failed";
  return r;
}

Outcome ac11_determinism(const ToyTraining& t, const CliRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  const bool ck = read_file(runs.a / "checkpoint.gpvc") == read_file(runs.b / "checkpoint.gpvc");
  const bool csv = read_file(runs.a / "metrics.csv") == read_file(runs.b / "metrics.csv");
  return {ck && csv, "two " + std::to_string(t.epochs) + "-epoch CLI train runs: checkpoint " +
                         (ck ? "byte-identical" : "DIFFERS") + ", metrics.csv " +
                         (csv ? "byte-identical" : "DIFFERS") + " (first run " +
                         fmt("%.0f", runs.seconds_a) + "s)"};
}

Outcome ac7_freezing(const ToyTraining& t, const CliRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  // The CLI starts from exactly this checkpoint.
  const Checkpoint start = prepare_tuning(t.backbone, t.rc.model, t.rc.tuning, t.rc.seed);
  const Checkpoint done = load_checkpoint(runs.a / "checkpoint.gpvc");
  if (done.trainable != start.trainable) return {false, "trainable set differs from the start"};
  const FreezeReport fr = assert_frozen(start.params, done.params, start.trainable);
  std::size_t backbone_same = 0, backbone_total = 0;
  for (const auto& [name, value] : start.params.items()) {
    if (!is_backbone_param(name)) continue;
    ++backbone_total;
    backbone_same += bits_equal(value.values(), done.params.get(name).values());
  }
  std::vector<std::string> unchanged;
  for (const auto& name : start.trainable)
    if (bits_equal(start.params.get(name).values(), done.params.get(name).values()))
      unchanged.push_back(name);
  std::string detail = std::to_string(backbone_same) + "/" + std::to_string(backbone_total) +
                       " backbone tensors bit-identical after " + std::to_string(t.epochs) +
                       " epochs; " + std::to_string(start.trainable.size() - unchanged.size()) +
                       "/" + std::to_string(start.trainable.size()) + " trainable tensors changed";
  if (!unchanged.empty()) detail += " (unchanged: " + unchanged.front() + ")";
  return {fr.ok() && backbone_same == backbone_total && unchanged.empty(), detail};
}

Outcome ac8_learning(const ToyTraining& t, const CliRuns& runs) {
  if (!runs.error.empty()) return {false, runs.error};
  const auto summary = nlohmann::json::parse(read_file(runs.a / "summary.json"));
  if (summary.at("dataset_hash").get<std::string>() != dataset_hash(t.data))
    return {false, "the CLI run trained on a different dataset"};
  const double ga = summary.at("final_train_accuracy").get<double>();

  TuningSetup shallow_tuning = t.rc.tuning;
  shallow_tuning.mode = PromptMode::shallow;
  const TrainResult shallow =
      train(t.rc.train_config(),
            prepare_tuning(t.backbone, t.rc.model, shallow_tuning, t.rc.seed), t.data);
  const double sa = shallow.metrics.final_train_accuracy;
  const double minutes = (runs.seconds_a + shallow.metrics.wall_seconds) / 60.0;

  std::ostringstream d;
  d << "lr " << t.lr << ", " << t.epochs << " epochs, n=" << t.data.size() << ": gated train acc "
    << fmt("%.4f", ga) << " (>= " << t.gated_min << "), shallow " << fmt("%.4f", sa)
    << " (>= " << t.shallow_min << "); gated " << fmt("%.0f", runs.seconds_a) << "s + shallow "
    << fmt("%.0f", shallow.metrics.wall_seconds) << "s = " << fmt("%.1f", minutes) << " min (< 15)";
  const bool on_grid =
      std::find(kLearningRateGrid.begin(), kLearningRateGrid.end(), t.lr) != kLearningRateGrid.end();
  if (!on_grid) d << "; lr is not on the search grid";
  return {on_grid && ga >= t.gated_min && sa >= t.shallow_min && minutes < 15.0, d.str()};
}

int failures = 0;

void report(const char* id, const std::function<Outcome()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += o.pass ? 0 : 1;
  std::printf("%s %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
  std::fflush(stdout);
}

}  // namespace

int main() {
  const fs::path work = fs::current_path() / "acceptance_work";
  fs::create_directories(work);

  report("AC2", ac2_degenerate_gates);
  report("AC3", ac3_aggregation_identity);
  report("AC4", ac4_selection_ratio);
  report("AC5", ac5_skip_invariance);
  report("AC6", ac6_temperature);
  report("AC9", ac9_hard_gates);
  report("AC10", [&] { return ac10_persistence(work); });
  report("AC1", ac1_gradient_check);

  // AC11, AC7 and the gated half of AC8 all read the same two CLI runs.
  ToyTraining toy;
  CliRuns runs;
  try {
    toy = toy_training();
    runs = cli_runs(work);
  } catch (const std::exception& e) {
    runs.error = std::string("setup failed: ") + e.what();
  }
  report("AC11", [&] { return ac11_determinism(toy, runs); });
  report("AC7", [&] { return ac7_freezing(toy, runs); });
  report("AC8", [&] { return ac8_learning(toy, runs); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
