#include "gpvit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "binio.hpp"
#include "gpvit/errors.hpp"
#include "gpvit/rng.hpp"

namespace gpvit {

void LabeledDataset::validate() const {
  if (!images.defined() || images.rank() != 4) {
    throw ConfigError("dataset images must be [n x H x W x C]");
  }
  if (labels.empty()) throw ConfigError("dataset is empty");
  if (images.dim(0) != labels.size()) {
    throw ConfigError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                      std::to_string(labels.size()) + " labels");
  }
  if (images.dim(1) != images.dim(2)) {
    throw ConfigError("dataset images must be square, got " + shape_str(images.shape()));
  }
  if (classes < 2) throw ConfigError("dataset needs at least 2 classes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                        " is outside [0, " + std::to_string(classes) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ConfigError("subset: no samples selected");
  const std::size_t stride = images.numel() / size();
  auto src = images.values();
  std::vector<double> data(indices.size() * stride);
  LabeledDataset out;
  out.classes = classes;
  out.split = split;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) {
      throw BoundsError("subset: index " + std::to_string(indices[i]) + " past " +
                        std::to_string(size()) + " samples");
    }
    std::copy_n(src.data() + indices[i] * stride, stride, data.data() + i * stride);
    out.labels.push_back(labels[indices[i]]);
  }
  Shape shape = images.shape();
  shape[0] = indices.size();
  out.images = Tensor::constant(std::move(shape), std::move(data));
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (std::int32_t y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

LabeledDataset generate_depth_selective(const DepthSelectiveSpec& spec) {
  if (spec.classes < 2) throw ConfigError("depth-selective task needs at least 2 classes");
  if (spec.n < 1) throw ConfigError("depth-selective task needs at least one sample");
  if (spec.image_size == 0 || spec.channels == 0 || spec.patch_size == 0 ||
      spec.image_size % spec.patch_size != 0) {
    throw ConfigError("depth-selective task: image_size " + std::to_string(spec.image_size) +
                      " must be a positive multiple of patch_size " +
                      std::to_string(spec.patch_size));
  }
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) {
    throw ConfigError("depth-selective task: noise must be finite and >= 0");
  }
  const std::size_t S = spec.image_size, C = spec.channels, P = spec.patch_size;
  const std::size_t grid = S / P, pixels = S * S * C, patch_len = P * P * C;
  constexpr std::size_t kPrototypes = 8;

  Rng rng(derive_seed(spec.seed, 0x7e3a11));
  std::vector<std::vector<double>> prototypes(kPrototypes, std::vector<double>(patch_len));
  for (auto& proto : prototypes)
    for (double& v : proto) v = rng.normal();

  std::vector<std::vector<double>> templates(spec.classes, std::vector<double>(pixels));
  for (auto& tmpl : templates) {
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const auto& proto = prototypes[rng.below(kPrototypes)];
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        std::size_t q = 0;
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            for (std::size_t c = 0; c < C; ++c)
              tmpl[((gy * P + py) * S + gx * P + px) * C + c] = sign * proto[q++];
      }
    }
  }

  struct Level {
    std::vector<std::size_t> perm;
    double a, b;
  };
  std::vector<Level> levels(spec.depth);
  for (auto& lv : levels) {
    lv.perm.resize(pixels);
    std::iota(lv.perm.begin(), lv.perm.end(), std::size_t{0});
    rng.shuffle(lv.perm);
    lv.a = rng.uniform(0.6, 1.0);
    lv.b = rng.uniform(0.4, 0.8);
  }

  std::vector<std::int32_t> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = static_cast<std::int32_t>(i % spec.classes);
  rng.shuffle(labels);

  std::vector<double> data(spec.n * pixels);
  std::vector<double> tmp(pixels);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double* x = data.data() + i * pixels;
    const auto& tmpl = templates[static_cast<std::size_t>(labels[i])];
    const double contrast = rng.uniform(0.75, 1.25);
    for (std::size_t p = 0; p < pixels; ++p) x[p] = contrast * tmpl[p] + spec.noise * rng.normal();
    for (const auto& lv : levels) {
      for (std::size_t p = 0; p < pixels; ++p) tmp[p] = std::tanh(lv.a * x[p] + lv.b * x[lv.perm[p]]);
      std::copy(tmp.begin(), tmp.end(), x);
    }
  }

  LabeledDataset ds;
  ds.images = Tensor::constant({spec.n, S, S, C}, std::move(data));
  ds.labels = std::move(labels);
  ds.classes = spec.classes;
  ds.split = "all";
  return ds;
}

std::string dataset_bytes(const LabeledDataset& ds) {
  ds.validate();
  std::string out(kDatasetMagic, sizeof kDatasetMagic);
  binio::put_u32(out, kDatasetVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(ds.split.size()));
  out += ds.split;
  for (std::size_t d : ds.images.shape()) binio::put_u64(out, d);
  binio::put_u64(out, ds.classes);
  binio::put_u64(out, ds.images.numel() * 8 + ds.labels.size() * 4);
  out.reserve(out.size() + ds.images.numel() * 8 + ds.labels.size() * 4);
  for (double v : ds.images.values()) binio::put_f64(out, v);
  for (std::int32_t y : ds.labels) binio::put_i32(out, y);
  return out;
}

LabeledDataset dataset_from_bytes(const std::string& bytes, const std::string& source) {
  binio::Reader in(bytes, source);
  const std::string magic = in.raw(sizeof kDatasetMagic, "magic");
  if (std::memcmp(magic.data(), kDatasetMagic, sizeof kDatasetMagic) != 0) {
    throw MagicError(source + ": not a dataset file (bad magic bytes)");
  }
  const std::uint32_t version = in.u32("format version");
  if (version != kDatasetVersion) {
    throw VersionError(source + ": dataset format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kDatasetVersion) + ")");
  }
  LabeledDataset ds;
  ds.split = in.raw(in.u32("split length"), "split tag");
  Shape shape(4);
  for (auto& d : shape) d = in.u64("dimensions");
  ds.classes = in.u64("class count");
  const std::uint64_t payload = in.u64("payload length");

  std::uint64_t values = 1;
  for (std::uint64_t d : shape) {
    if (d == 0 || values > (std::uint64_t{1} << 40) / d) {
      throw CorruptionError(source + ": implausible dimensions " + shape_str(shape));
    }
    values *= d;
  }
  const std::uint64_t expected = values * 8 + shape[0] * 4;
  if (payload != expected) {
    throw CorruptionError(source + ": header declares " + std::to_string(payload) +
                          " payload bytes but dimensions " + shape_str(shape) + " need " +
                          std::to_string(expected));
  }
  if (in.remaining() < payload) {
    throw TruncationError(source + ": payload holds " + std::to_string(in.remaining()) +
                          " bytes, header declares " + std::to_string(payload));
  }
  if (in.remaining() > payload) {
    throw CorruptionError(source + ": " + std::to_string(in.remaining() - payload) +
                          " unexpected trailing bytes");
  }
  std::vector<double> data(values);
  for (double& v : data) v = in.f64("images");
  ds.labels.resize(shape[0]);
  for (auto& y : ds.labels) y = in.i32("labels");
  try {
    ds.images = Tensor::constant(shape, std::move(data));
    ds.validate();
  } catch (const Error& e) {
    throw CorruptionError(source + ": " + e.what());
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  binio::write_file(path, dataset_bytes(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_bytes(binio::read_file(path), path.string());
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double fraction,
                                                        std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw DomainError("split fraction must lie strictly between 0 and 1");
  }
  ds.validate();
  Rng rng(derive_seed(seed, 0x5b1d));
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::vector<std::size_t> first, second;
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    first.insert(first.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    second.insert(second.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  if (first.empty() || second.empty()) {
    throw ConfigError("split of " + std::to_string(ds.size()) + " samples at fraction " +
                      std::to_string(fraction) + " leaves one side empty");
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  auto a = ds.subset(first);
  auto b = ds.subset(second);
  a.split = "train";
  b.split = "val";
  return {std::move(a), std::move(b)};
}

}  // namespace gpvit
