#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gpvit/tensor.hpp"

namespace gpvit {

struct LabeledDataset {
  Tensor images;  // [n × H × W × C]
  std::vector<std::int32_t> labels;
  std::size_t classes = 0;
  std::string split = "all";

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.dim(1); }
  std::size_t channels() const { return images.dim(3); }

  /// Throws ConfigError if shapes, labels or the class count disagree.
  void validate() const;
  /// Images and labels at `indices`, in that order.
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> class_counts() const;
};

struct DepthSelectiveSpec {
  std::uint64_t seed = 0;
  std::size_t n = 500;
  std::size_t classes = 10;
  std::size_t depth = 0;  // mixing levels between the templates and the pixels
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  double noise = 0.5;
};

/// Synthetic classification task. Every class owns a template with an
/// independent random pattern per patch; a sample is its class template at a
/// random contrast in [0.75, 1.25] plus Gaussian pixel noise. Then `depth`
/// fixed mixing levels x ← tanh(a·x + b·x[π]) are applied, each with its own
/// random pixel permutation π, so telling classes apart means undoing that
/// many levels. Labels are balanced (counts differ by at most one) and
/// shuffled. A pure function of its settings.
LabeledDataset generate_depth_selective(const DepthSelectiveSpec& spec);

// Dataset file layout (little-endian):
//
//   magic          8 bytes  "GPVTDSET"
//   version        u32      currently 1
//   split length   u32, then that many bytes of split tag
//   n, H, W, C     u64 each
//   classes        u64
//   payload bytes  u64      must equal 8·n·H·W·C + 4·n
//   images         n·H·W·C f64, row-major [n × H × W × C]
//   labels         n i32
inline constexpr char kDatasetMagic[8] = {'G', 'P', 'V', 'T', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string dataset_bytes(const LabeledDataset& ds);
/// MagicError, VersionError, TruncationError (file ends early) or
/// CorruptionError (header inconsistent with itself or the payload, bad labels).
LabeledDataset dataset_from_bytes(const std::string& bytes, const std::string& source = "<memory>");
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// Class-stratified split: each class contributes round(count · fraction)
/// samples to the first part. Both parts keep the original sample order.
/// Throws DomainError unless 0 < fraction < 1 and ConfigError when either
/// part would be empty.
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double fraction,
                                                        std::uint64_t seed);

}  // namespace gpvit
