#include "gpvit/checkpoint.hpp"

#include <cstring>
#include <map>

#include "binio.hpp"
#include "gpvit/errors.hpp"
#include "json.hpp"

namespace gpvit {

using nlohmann::json;

TrainableMask Checkpoint::backbone_names() const {
  TrainableMask out;
  for (const auto& name : params.names())
    if (!trainable.count(name)) out.insert(name);
  return out;
}

namespace {

json config_json(const ViTConfig& c) {
  return {{"image_size", c.image_size}, {"channels", c.channels},   {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},   {"num_blocks", c.num_blocks}, {"num_heads", c.num_heads},
          {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes}, {"ln_eps", c.ln_eps}};
}

ViTConfig config_from(const json& j) {
  ViTConfig c;
  c.image_size = j.at("image_size").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.patch_size = j.at("patch_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  return c;
}

json tuning_json(const TuningSetup& t) {
  return {{"mode", to_string(t.mode)},
          {"num_prompts", t.num_prompts},
          {"gate_mode", to_string(t.gate_mode)},
          {"gate_init", t.gate_init},
          {"fixed_gate", t.fixed_gate},
          {"gumbel_temperature", t.gumbel_temperature},
          {"attention_shaping", t.attention_shaping}};
}

TuningSetup tuning_from(const json& j) {
  TuningSetup t;
  t.mode = parse_prompt_mode(j.at("mode").get<std::string>());
  t.num_prompts = j.at("num_prompts").get<std::size_t>();
  t.gate_mode = parse_gate_mode(j.at("gate_mode").get<std::string>());
  t.gate_init = j.at("gate_init").get<double>();
  t.fixed_gate = j.at("fixed_gate").get<double>();
  t.gumbel_temperature = j.at("gumbel_temperature").get<double>();
  t.attention_shaping = j.at("attention_shaping").get<bool>();
  return t;
}

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  for (const auto& name : ckpt.trainable) {
    if (!ckpt.params.contains(name)) {
      throw StateError("checkpoint: trainable name '" + name + "' is not a parameter");
    }
  }
  json header;
  header["format_version"] = ckpt.format_version;
  header["config"] = config_json(ckpt.config);
  header["tuning"] = tuning_json(ckpt.tuning);
  header["seed"] = ckpt.seed;
  header["fingerprint"] = ckpt.fingerprint;
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.params.items()) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  header["params"] = std::move(entries);
  header["trainable"] = std::vector<std::string>(ckpt.trainable.begin(), ckpt.trainable.end());
  const std::string text = header.dump(1);

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  binio::put_u32(out, ckpt.format_version);
  binio::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& [_, t] : ckpt.params.items())
    for (double v : t.values()) binio::put_f64(out, v);
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& source) {
  binio::Reader in(bytes, source);
  const std::string magic = in.raw(sizeof kCheckpointMagic, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw MagicError(source + ": not a checkpoint file (bad magic bytes)");
  }
  const std::uint32_t version = in.u32("format version");
  if (version != kCheckpointVersion) {
    throw VersionError(source + ": checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = in.u64("header length");
  const std::string text = in.raw(header_len, "header");

  Checkpoint ckpt;
  std::vector<std::tuple<std::string, Shape, std::size_t>> entries;
  try {
    const json header = json::parse(text);
    ckpt.format_version = header.at("format_version").get<std::uint32_t>();
    ckpt.config = config_from(header.at("config"));
    ckpt.tuning = tuning_from(header.at("tuning"));
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.fingerprint = header.at("fingerprint").get<std::string>();
    for (const auto& e : header.at("params")) {
      entries.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>(),
                           e.at("offset").get<std::size_t>());
    }
    for (const auto& name : header.at("trainable")) ckpt.trainable.insert(name.get<std::string>());
  } catch (const json::exception& e) {
    throw CorruptionError(source + ": malformed checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptionError(source + ": malformed checkpoint header: " + e.what());
  }

  std::size_t expected = 0;
  for (const auto& [name, shape, offset] : entries) {
    if (offset != expected) {
      throw CorruptionError(source + ": parameter '" + name + "' has offset " +
                            std::to_string(offset) + ", expected " + std::to_string(expected));
    }
    expected += shape_numel(shape);
  }
  const std::size_t payload = in.remaining();
  if (payload < expected * 8) {
    throw TruncationError(source + ": payload holds " + std::to_string(payload) +
                          " bytes but the header describes " + std::to_string(expected * 8));
  }
  if (payload > expected * 8) {
    throw CorruptionError(source + ": " + std::to_string(payload - expected * 8) +
                          " unexpected trailing payload bytes");
  }
  for (const auto& [name, shape, offset] : entries) {
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = in.f64("payload");
    try {
      ckpt.params.set(name, Tensor::constant(shape, std::move(values)));
    } catch (const Error& e) {
      throw CorruptionError(source + ": parameter '" + name + "': " + e.what());
    }
  }
  for (const auto& name : ckpt.trainable) {
    if (!ckpt.params.contains(name)) {
      throw CorruptionError(source + ": trainable name '" + name + "' is not a parameter");
    }
  }
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(source + ": " + e.what());
  }
  check_compatible(ckpt, ckpt.config);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  binio::write_file(path, checkpoint_bytes(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes(binio::read_file(path), path.string());
}

void check_compatible(const Checkpoint& ckpt, const ViTConfig& config) {
  for (const auto& [name, shape] : backbone_layout(config)) {
    if (!ckpt.params.contains(name)) {
      throw ShapeError("checkpoint is missing parameter '" + name + "' " + shape_str(shape));
    }
    const Shape& have = ckpt.params.get(name).shape();
    if (have != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(have) + ", expected " +
                       shape_str(shape));
    }
  }
}

}  // namespace gpvit
