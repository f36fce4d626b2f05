// gpvit command-line front end.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure
// (non-finite values, failed gradient check), 3 file I/O error.
// Every output except the sidecar run.log is a pure function of the binary,
// the config and the seed.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
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

enum Exit { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> tolerance;
  std::string checkpoint;
  std::string data;
  std::size_t sample = 0;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Timestamps live here and nowhere else.
class SidecarLog {
 public:
  SidecarLog(const fs::path& dir, std::string command)
      : path_(dir / "run.log"), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(dir);
    line("start");
  }
  void line(const std::string& text) {
    std::ofstream out(path_, std::ios::app);
    out << utc_now() << " " << command_ << " " << text << "\n";
  }
  void done(const std::string& text) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", secs);
    line(text + " wall_seconds=" + buf);
  }

 private:
  fs::path path_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
};

RunConfig load_config(const Options& o) {
  RunConfig c = load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

void write_resolved(const RunConfig& c) {
  write_file(c.output_dir / "resolved_config.yaml",
             "# config_fingerprint=" + c.fingerprint() + "\n" + c.to_yaml());
}

// Train and optional validation parts of the configured dataset.
std::pair<LabeledDataset, std::optional<LabeledDataset>> load_data(const RunConfig& c) {
  LabeledDataset all = load_dataset(c.dataset.path);
  if (c.dataset.val_fraction == 0.0) return {std::move(all), std::nullopt};
  auto [train, val] = split_dataset(all, 1.0 - c.dataset.val_fraction, c.seed);
  return {std::move(train), std::move(val)};
}

int cmd_train(const Options& o) {
  const RunConfig c = load_config(o);
  SidecarLog log(c.output_dir, "train");
  write_resolved(c);
  const auto [train_set, val_set] = load_data(c);
  const ParamStore backbone = resolve_backbone(c);
  Checkpoint start = prepare_tuning(backbone, c.model, c.tuning, c.seed);
  start.fingerprint = c.fingerprint();
  const TrainResult r = train(c.train_config(), start, train_set, val_set ? &*val_set : nullptr);

  save_checkpoint(c.output_dir / "checkpoint.gpvc", r.checkpoint);
  write_file(c.output_dir / "metrics.csv", r.metrics.csv(c.fingerprint()));
  nlohmann::ordered_json summary;
  summary["config_fingerprint"] = c.fingerprint();
  summary["dataset_hash"] = dataset_hash(train_set);
  summary["final_train_accuracy"] = r.metrics.final_train_accuracy;
  summary["final_train_loss"] = r.metrics.final_train_loss;
  summary["final_gates"] = r.metrics.final_gates;
  summary["final_temperatures"] = r.metrics.final_temperatures;
  summary["checkpoint_hash"] = hex64(r.checkpoint.params.fingerprint());
  write_file(c.output_dir / "summary.json", summary.dump(2) + "\n");

  std::printf("train accuracy %.4f, loss %.6g -> %s\n", r.metrics.final_train_accuracy,
              r.metrics.final_train_loss, (c.output_dir / "checkpoint.gpvc").string().c_str());
  log.done("ok");
  return kOk;
}

int cmd_eval(const Options& o) {
  const RunConfig c = load_config(o);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const LabeledDataset data = load_dataset(c.dataset.path);
  SidecarLog log(c.output_dir, "eval");
  const EvalResult r = evaluate(ck.params, ck.config, ck.tuning, data);
  nlohmann::ordered_json j;
  j["checkpoint_fingerprint"] = ck.fingerprint;
  j["checkpoint_hash"] = hex64(ck.params.fingerprint());
  j["dataset_hash"] = dataset_hash(data);
  j["accuracy"] = r.accuracy;
  j["loss"] = r.loss;
  write_file(c.output_dir / "eval.json", j.dump(2) + "\n");
  std::printf("accuracy %.4f, loss %.6g\n", r.accuracy, r.loss);
  log.done("ok");
  return kOk;
}

int cmd_analyze(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  if (ck.tuning.mode != PromptMode::gated) {
    throw ModeError("analyze needs a gated checkpoint, '" + o.checkpoint + "' was tuned in " +
                    to_string(ck.tuning.mode) + " mode");
  }
  const fs::path out = o.out.empty() ? fs::path(o.checkpoint).parent_path() / "analysis" : fs::path(o.out);
  SidecarLog log(out, "analyze");

  const GateBank bank = GateBank::from_params(ck.params, ck.tuning, ck.config.num_blocks);
  const SelectionReport report = SelectionReport::from_gates(gate_numbers(bank), ck.fingerprint);
  write_file(out / "selection.json", report.to_json());
  write_file(out / "selection.svg", selection_svg(report));

  LabeledDataset source;
  if (!o.data.empty()) {
    source = load_dataset(o.data);
  } else {
    DepthSelectiveSpec spec;
    spec.n = ck.config.num_classes;
    spec.classes = ck.config.num_classes;
    spec.image_size = ck.config.image_size;
    spec.channels = ck.config.channels;
    spec.patch_size = ck.config.patch_size;
    source = generate_depth_selective(spec);
  }
  if (o.sample >= source.size()) {
    throw BoundsError("--sample " + std::to_string(o.sample) + " is past the " +
                      std::to_string(source.size()) + " available images");
  }
  const Tensor image = source.subset({o.sample}).images;
  std::vector<std::size_t> blocks(ck.config.num_blocks);
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b] = b;
  export_attention_maps(ck.params, ck.config, ck.tuning, image, blocks, out);

  std::printf("selection ratios:");
  for (double r : report.ratios) std::printf(" %.4f", r);
  std::printf("\nresidual prompt weight %.4g -> %s\n", report.residual_weight, out.string().c_str());
  log.done("ok");
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  RunConfig c = load_config(o);
  if (o.tolerance) c.gradcheck.tolerance = *o.tolerance;
  SidecarLog log(c.output_dir, "gradcheck");
  const Checkpoint ck = prepare_tuning(resolve_backbone(c), c.model, c.tuning, c.seed);
  const std::size_t scalars = ck.params.scalar_count(ck.trainable);
  if (scalars > c.gradcheck.max_params) {
    throw ConfigError("gradcheck refused: " + std::to_string(scalars) +
                      " trainable scalars exceed the cap of " +
                      std::to_string(c.gradcheck.max_params) +
                      "; every scalar costs two extra forward passes, so use a smaller model "
                      "or raise gradcheck.max_params");
  }
  DepthSelectiveSpec spec = c.dataset.synthetic;
  spec.n = c.gradcheck.batch_size;
  const LabeledDataset batch = generate_depth_selective(spec);
  // Inference-mode forward keeps the loss deterministic for every gate mode.
  const LossFn loss = [&](const ParamStore& p) {
    return cross_entropy(model_forward(batch.images, p, c.model, c.tuning), batch.labels);
  };
  GradCheckOptions opts;
  opts.step = c.gradcheck.step;
  opts.tolerance = c.gradcheck.tolerance;
  opts.seed = c.seed;
  const GradCheckReport r = finite_diff_check(
      loss, ck.params, std::vector<std::string>(ck.trainable.begin(), ck.trainable.end()), opts);

  std::string text = "# config_fingerprint=" + c.fingerprint() + "\n";
  text += "tolerance " + format_number(r.tolerance) + "\n";
  text += "checked " + std::to_string(r.entries.size()) + "\n";
  text += "failures " + std::to_string(r.failures()) + "\n";
  text += "max_rel_error " + format_number(r.max_rel_error) + "\n";
  text += "result " + std::string(r.passed ? "PASS" : "FAIL") + "\n";
  text += "worst 10: param,index,analytic,numeric,rel_error\n";
  for (const auto& e : r.worst(10)) {
    text += e.param + "," + std::to_string(e.index) + "," + format_number(e.analytic) + "," +
            format_number(e.numeric) + "," + format_number(e.rel_error) + "\n";
  }
  write_file(c.output_dir / "gradcheck_report.txt", text);
  std::fputs(text.c_str(), stdout);
  log.done(r.passed ? "pass" : "fail");
  return r.passed ? kOk : kNumeric;
}

int thread_cap() {
  const char* env = std::getenv("GPVIT_MAX_THREADS");
  if (!env || !*env) return omp_get_max_threads();
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) {
    throw ConfigError(std::string("GPVIT_MAX_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(v);
}

int cmd_compare(const Options& o) {
  const RunConfig c = load_config(o);
  SidecarLog log(c.output_dir, "compare");
  write_resolved(c);
  const auto [train_set, val_set] = load_data(c);
  const auto rows = run_ablation(c.compare, c.train_config(), c.tuning, c.model, resolve_backbone(c),
                                 train_set, val_set ? &*val_set : nullptr, thread_cap());
  const std::string csv = ablation_csv(rows, c.fingerprint(), c.seed);
  write_file(c.output_dir / "ablation.csv", csv);
  std::fputs(csv.c_str(), stdout);
  log.done("ok rows=" + std::to_string(rows.size()));
  return kOk;
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path path = o.out.empty() ? c.dataset.path : fs::path(o.out);
  SidecarLog log(path.has_parent_path() ? path.parent_path() : fs::path("."), "gen-data");
  const LabeledDataset ds = generate_depth_selective(c.dataset.synthetic);
  save_dataset(path, ds);
  std::printf("%zu samples, %zu classes, depth %zu -> %s (%s)\n", ds.size(), ds.classes,
              c.dataset.synthetic.depth, path.string().c_str(), dataset_hash(ds).c_str());
  log.done("ok");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated prompt tuning for a frozen vision transformer"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "YAML run config")->required()->check(CLI::ExistingFile);
  };
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", o.seed, "overrides the config seed");
  };

  auto* train = app.add_subcommand("train", "tune prompts on the configured dataset");
  add_config(train);
  add_seed(train);
  train->add_option("--out", o.out, "output directory (default: output_dir)");

  auto* eval = app.add_subcommand("eval", "accuracy and loss of a checkpoint");
  add_config(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--out", o.out, "output directory");

  auto* analyze = app.add_subcommand("analyze", "selection ratios and attention maps");
  analyze->add_option("--checkpoint", o.checkpoint, "gated checkpoint")->required();
  analyze->add_option("--out", o.out, "output directory (default: next to the checkpoint)");
  analyze->add_option("--data", o.data, "dataset supplying the attention image");
  analyze->add_option("--sample", o.sample, "image index for the attention maps");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  add_config(gradcheck);
  add_seed(gradcheck);
  gradcheck->add_option("--tolerance", o.tolerance, "relative error tolerance");
  gradcheck->add_option("--out", o.out, "output directory");

  auto* compare = app.add_subcommand("compare", "ablation grid (GPVIT_MAX_THREADS caps workers)");
  add_config(compare);
  add_seed(compare);
  compare->add_option("--out", o.out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic depth-selective dataset");
  add_config(gen);
  gen->add_option("--out", o.out, "dataset file (default: dataset.path)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    omp_set_num_threads(thread_cap());
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*analyze) return cmd_analyze(o);
    if (*gradcheck) return cmd_gradcheck(o);
    if (*compare) return cmd_compare(o);
    if (*gen) return cmd_gen_data(o);
  } catch (const NumericError& e) {
    std::cerr << "gpvit: numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DegenerateGatesError& e) {
    std::cerr << "gpvit: numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "gpvit: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "gpvit: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "gpvit: error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}
