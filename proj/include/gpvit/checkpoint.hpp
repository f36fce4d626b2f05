#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gpvit/params.hpp"
#include "gpvit/tuning.hpp"
#include "gpvit/vit.hpp"

namespace gpvit {

// Checkpoint file layout (all integers little-endian):
//
//   offset 0   magic            8 bytes  "GPVTCKPT"
//   offset 8   format version   u32      currently 1
//   offset 12  header length    u64      bytes of the JSON header
//   offset 20  header           JSON: config, tuning, seed, fingerprint,
//                               params [{name, shape, offset}], trainable
//   then       payload          f64 values of every parameter, in header
//                               order; `offset` counts values, not bytes
inline constexpr char kCheckpointMagic[8] = {'G', 'P', 'V', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ViTConfig config;
  TuningSetup tuning;
  ParamStore params;
  TrainableMask trainable;
  std::uint64_t seed = 0;
  std::uint32_t format_version = kCheckpointVersion;
  /// Free-form provenance (e.g. the run-config fingerprint); not validated.
  std::string fingerprint;

  /// Parameters outside the trainable mask.
  TrainableMask backbone_names() const;
};

std::string checkpoint_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Distinct errors: MagicError, VersionError, TruncationError, ShapeError
/// (a parameter disagrees with the stored config), CorruptionError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ShapeError naming the first backbone parameter of `ckpt` whose
/// shape differs from what `config` requires.
void check_compatible(const Checkpoint& ckpt, const ViTConfig& config);

}  // namespace gpvit
