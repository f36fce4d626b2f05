#include "gpvit/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <set>

#include "binio.hpp"
#include "gpvit/checkpoint.hpp"
#include "gpvit/errors.hpp"
#include "gpvit/params.hpp"
#include "gpvit/prompts.hpp"

namespace gpvit {

namespace {

std::string where(const std::string& source, const YAML::Mark& mark) {
  if (mark.is_null()) return source;
  return source + ":" + std::to_string(mark.line + 1);
}

// One mapping of the document. Reads declare the allowed keys; `finish`
// rejects the rest.
class Section {
 public:
  Section(YAML::Node node, std::string prefix, const std::string& source)
      : node_(std::move(node)), prefix_(std::move(prefix)), source_(source) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) {
      throw ConfigError(where(source_, node_.Mark()) + ": '" + name("") + "' must be a mapping");
    }
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    allowed_.insert(key);
    const YAML::Node v = lookup(key);
    if (!v) return;
    try {
      if (!v.IsScalar()) throw YAML::BadConversion(v.Mark());
      out = v.as<T>();
    } catch (const YAML::BadConversion&) {
      throw ConfigError(where(source_, v.Mark()) + ": key '" + name(key) + "' has an invalid value");
    }
  }

  /// Scalar through a parser that throws ConfigError on bad names.
  template <typename T, typename Parse>
  void read_with(const std::string& key, T& out, Parse parse) {
    std::string text;
    const bool present = static_cast<bool>(lookup(key));
    read(key, text);
    if (!present) return;
    try {
      out = parse(text);
    } catch (const ConfigError& e) {
      throw ConfigError(where(source_, lookup(key).Mark()) + ": key '" + name(key) + "': " + e.what());
    }
  }

  template <typename T, typename Parse>
  void read_list(const std::string& key, std::vector<T>& out, Parse parse) {
    allowed_.insert(key);
    const YAML::Node v = lookup(key);
    if (!v) return;
    if (!v.IsSequence()) {
      throw ConfigError(where(source_, v.Mark()) + ": key '" + name(key) + "' must be a list");
    }
    out.clear();
    for (const auto& item : v) {
      try {
        out.push_back(parse(item));
      } catch (const YAML::BadConversion&) {
        throw ConfigError(where(source_, item.Mark()) + ": key '" + name(key) +
                          "' has an invalid entry");
      } catch (const ConfigError& e) {
        throw ConfigError(where(source_, item.Mark()) + ": key '" + name(key) + "': " + e.what());
      }
    }
  }

  Section child(const std::string& key) {
    allowed_.insert(key);
    return Section(lookup(key), name(key), source_);
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed_.count(key)) {
        throw ConfigError(where(source_, kv.first.Mark()) + ": unknown key '" + name(key) + "'");
      }
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const YAML::Node v = lookup(key);
    throw ConfigError(where(source_, v ? v.Mark() : node_.Mark()) + ": key '" + name(key) +
                      "': " + message);
  }

 private:
  YAML::Node lookup(const std::string& key) const {
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    for (const auto& kv : node_)
      if (kv.first.as<std::string>() == key) return kv.second;
    return YAML::Node(YAML::NodeType::Undefined);
  }

  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

  YAML::Node node_;
  std::string prefix_;
  const std::string& source_;
  std::set<std::string> allowed_;
};

void emit_list(YAML::Emitter& out, const char* key, const std::vector<std::string>& items) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& s : items) out << s;
  out << YAML::EndSeq;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  tuning.validate(model);
  train.validate();
  if (!(dataset.val_fraction >= 0.0 && dataset.val_fraction < 1.0)) {
    throw ConfigError("dataset.val_fraction must lie in [0, 1)");
  }
  if (dataset.synthetic.image_size != model.image_size ||
      dataset.synthetic.channels != model.channels ||
      dataset.synthetic.patch_size != model.patch_size ||
      dataset.synthetic.classes != model.num_classes) {
    throw ConfigError("dataset.synthetic geometry disagrees with the model section");
  }
  if (compare.modes.empty() || compare.attention_shaping.empty() || compare.gates.empty()) {
    throw ConfigError("compare: modes, attention_shaping and gates must be nonempty");
  }
  if (gradcheck.batch_size == 0) throw ConfigError("gradcheck.batch_size must be positive");
  if (!(gradcheck.step > 0.0) || !(gradcheck.tolerance > 0.0)) {
    throw ConfigError("gradcheck.step and gradcheck.tolerance must be positive");
  }
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

std::string RunConfig::to_yaml() const {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << seed;
  out << YAML::Key << "output_dir" << YAML::Value << output_dir.generic_string();

  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "image_size" << YAML::Value << model.image_size;
  out << YAML::Key << "channels" << YAML::Value << model.channels;
  out << YAML::Key << "patch_size" << YAML::Value << model.patch_size;
  out << YAML::Key << "embed_dim" << YAML::Value << model.embed_dim;
  out << YAML::Key << "num_blocks" << YAML::Value << model.num_blocks;
  out << YAML::Key << "num_heads" << YAML::Value << model.num_heads;
  out << YAML::Key << "mlp_ratio" << YAML::Value << model.mlp_ratio;
  out << YAML::Key << "num_classes" << YAML::Value << model.num_classes;
  out << YAML::Key << "ln_eps" << YAML::Value << model.ln_eps;
  out << YAML::EndMap;

  out << YAML::Key << "backbone" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << backbone.seed;
  out << YAML::Key << "checkpoint" << YAML::Value << backbone.checkpoint.generic_string();
  out << YAML::EndMap;

  out << YAML::Key << "tuning" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << to_string(tuning.mode);
  out << YAML::Key << "num_prompts" << YAML::Value << tuning.num_prompts;
  out << YAML::Key << "gate_mode" << YAML::Value << to_string(tuning.gate_mode);
  out << YAML::Key << "gate_init" << YAML::Value << tuning.gate_init;
  out << YAML::Key << "fixed_gate" << YAML::Value << tuning.fixed_gate;
  out << YAML::Key << "gumbel_temperature" << YAML::Value << tuning.gumbel_temperature;
  out << YAML::Key << "attention_shaping" << YAML::Value << tuning.attention_shaping;
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "learning_rate" << YAML::Value << train.learning_rate;
  out << YAML::Key << "momentum" << YAML::Value << train.momentum;
  out << YAML::Key << "batch_size" << YAML::Value << train.batch_size;
  out << YAML::Key << "epochs" << YAML::Value << train.epochs;
  out << YAML::Key << "eval_every" << YAML::Value << train.eval_every;
  out << YAML::Key << "allow_off_grid_lr" << YAML::Value << train.allow_off_grid_lr;
  out << YAML::EndMap;

  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "path" << YAML::Value << dataset.path.generic_string();
  out << YAML::Key << "val_fraction" << YAML::Value << dataset.val_fraction;
  out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << dataset.synthetic.seed;
  out << YAML::Key << "n" << YAML::Value << dataset.synthetic.n;
  out << YAML::Key << "depth" << YAML::Value << dataset.synthetic.depth;
  out << YAML::Key << "noise" << YAML::Value << dataset.synthetic.noise;
  out << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "compare" << YAML::Value << YAML::BeginMap;
  std::vector<std::string> items;
  for (PromptMode m : compare.modes) items.push_back(to_string(m));
  emit_list(out, "modes", items);
  out << YAML::Key << "attention_shaping" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (bool b : compare.attention_shaping) out << b;
  out << YAML::EndSeq;
  items.clear();
  for (GateVariant g : compare.gates) items.push_back(to_string(g));
  emit_list(out, "gates", items);
  out << YAML::EndMap;

  out << YAML::Key << "gradcheck" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "max_params" << YAML::Value << gradcheck.max_params;
  out << YAML::Key << "batch_size" << YAML::Value << gradcheck.batch_size;
  out << YAML::Key << "step" << YAML::Value << gradcheck.step;
  out << YAML::Key << "tolerance" << YAML::Value << gradcheck.tolerance;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string RunConfig::fingerprint() const {
  RunConfig copy = *this;
  copy.output_dir.clear();
  const std::string text = copy.to_yaml();
  return hex64(fnv1a(text.data(), text.size()));
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(where(source, e.mark) + ": " + e.msg);
  }
  RunConfig c;
  Section root(doc, "", source);
  root.read("seed", c.seed);
  std::string path = c.output_dir.string();
  root.read("output_dir", path);
  c.output_dir = path;

  Section model = root.child("model");
  model.read("image_size", c.model.image_size);
  model.read("channels", c.model.channels);
  model.read("patch_size", c.model.patch_size);
  model.read("embed_dim", c.model.embed_dim);
  model.read("num_blocks", c.model.num_blocks);
  model.read("num_heads", c.model.num_heads);
  model.read("mlp_ratio", c.model.mlp_ratio);
  model.read("num_classes", c.model.num_classes);
  model.read("ln_eps", c.model.ln_eps);
  model.finish();

  Section backbone = root.child("backbone");
  backbone.read("seed", c.backbone.seed);
  path = c.backbone.checkpoint.string();
  backbone.read("checkpoint", path);
  c.backbone.checkpoint = path;
  backbone.finish();

  Section tuning = root.child("tuning");
  tuning.read_with("mode", c.tuning.mode, parse_prompt_mode);
  tuning.read("num_prompts", c.tuning.num_prompts);
  tuning.read_with("gate_mode", c.tuning.gate_mode, parse_gate_mode);
  tuning.read("gate_init", c.tuning.gate_init);
  tuning.read("fixed_gate", c.tuning.fixed_gate);
  tuning.read("gumbel_temperature", c.tuning.gumbel_temperature);
  tuning.read("attention_shaping", c.tuning.attention_shaping);
  tuning.finish();

  Section train = root.child("train");
  train.read("learning_rate", c.train.learning_rate);
  train.read("momentum", c.train.momentum);
  train.read("batch_size", c.train.batch_size);
  train.read("epochs", c.train.epochs);
  train.read("eval_every", c.train.eval_every);
  train.read("allow_off_grid_lr", c.train.allow_off_grid_lr);
  train.finish();
  try {
    c.train.validate();
  } catch (const ConfigError& e) {
    const std::string message = e.what();
    std::string key;
    for (const char* k : {"learning_rate", "momentum", "batch_size"})
      if (message.find(k) != std::string::npos) key = k;
    train.fail(key, message);
  }

  Section dataset = root.child("dataset");
  path = c.dataset.path.string();
  dataset.read("path", path);
  c.dataset.path = path;
  dataset.read("val_fraction", c.dataset.val_fraction);
  Section synthetic = dataset.child("synthetic");
  synthetic.read("seed", c.dataset.synthetic.seed);
  synthetic.read("n", c.dataset.synthetic.n);
  synthetic.read("depth", c.dataset.synthetic.depth);
  synthetic.read("noise", c.dataset.synthetic.noise);
  synthetic.finish();
  dataset.finish();
  c.dataset.synthetic.image_size = c.model.image_size;
  c.dataset.synthetic.channels = c.model.channels;
  c.dataset.synthetic.patch_size = c.model.patch_size;
  c.dataset.synthetic.classes = c.model.num_classes;

  Section compare = root.child("compare");
  compare.read_list("modes", c.compare.modes,
                    [](const YAML::Node& n) { return parse_prompt_mode(n.as<std::string>()); });
  compare.read_list("attention_shaping", c.compare.attention_shaping,
                    [](const YAML::Node& n) { return n.as<bool>(); });
  compare.read_list("gates", c.compare.gates,
                    [](const YAML::Node& n) { return parse_gate_variant(n.as<std::string>()); });
  compare.finish();

  Section gradcheck = root.child("gradcheck");
  gradcheck.read("max_params", c.gradcheck.max_params);
  gradcheck.read("batch_size", c.gradcheck.batch_size);
  gradcheck.read("step", c.gradcheck.step);
  gradcheck.read("tolerance", c.gradcheck.tolerance);
  gradcheck.finish();

  root.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.string());
}

ParamStore resolve_backbone(const RunConfig& config) {
  if (config.backbone.checkpoint.empty()) return init_params(config.model, config.backbone.seed);
  const Checkpoint ck = load_checkpoint(config.backbone.checkpoint);
  check_compatible(ck, config.model);
  ParamStore out;
  for (const auto& [name, t] : ck.params.items())
    if (is_backbone_param(name)) out.set(name, t);
  return out;
}

}  // namespace gpvit
