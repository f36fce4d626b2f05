#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "gpvit/dataset.hpp"
#include "gpvit/errors.hpp"
#include "gpvit/files.hpp"
#include "support.hpp"

using namespace gpvit;
using namespace gpvit::testing;
namespace fs = std::filesystem;

namespace {

DepthSelectiveSpec small_spec(std::uint64_t seed, std::size_t n = 100) {
  DepthSelectiveSpec s;
  s.seed = seed;
  s.n = n;
  s.image_size = 16;
  s.patch_size = 8;
  return s;
}

// Nearest class mean on raw pixels: a linear classifier with
// w_c = μ_c and b_c = −|μ_c|²/2, fit and scored on the same samples.
double nearest_mean_accuracy(const LabeledDataset& ds) {
  const std::size_t n = ds.size(), dim = ds.images.numel() / n;
  const auto x = ds.images.values();
  std::vector<std::vector<double>> mu(ds.classes, std::vector<double>(dim, 0.0));
  std::vector<double> count(ds.classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    count[c] += 1.0;
    for (std::size_t j = 0; j < dim; ++j) mu[c][j] += x[i * dim + j];
  }
  for (std::size_t c = 0; c < ds.classes; ++c)
    for (double& v : mu[c]) v /= count[c];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < ds.classes; ++c) {
      double score = 0.0, norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        score += mu[c][j] * x[i * dim + j];
        norm += mu[c][j] * mu[c][j];
      }
      score -= 0.5 * norm;
      if (score > best_score) best_score = score, best = c;
    }
    correct += best == static_cast<std::size_t>(ds.labels[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::string scratch_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gpvit_test_dataio";
  fs::create_directories(dir);
  return (dir / name).string();
}

void put_u64(std::string& bytes, std::size_t offset, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes[offset + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

}  // namespace

TEST_CASE("generator: shape, balance and seed determinism") {
  const LabeledDataset ds = generate_depth_selective(small_spec(1));
  CHECK(ds.images.shape() == Shape{100, 16, 16, 3});
  CHECK(ds.size() == 100);
  CHECK(ds.classes == 10);
  CHECK_NOTHROW(ds.validate());
  for (std::size_t c : ds.class_counts()) CHECK(c == 10);

  const LabeledDataset odd = generate_depth_selective(small_spec(1, 23));
  const auto counts = odd.class_counts();
  CHECK(*std::max_element(counts.begin(), counts.end()) -
            *std::min_element(counts.begin(), counts.end()) <=
        1);

  CHECK(dataset_bytes(ds) == dataset_bytes(generate_depth_selective(small_spec(1))));
  CHECK(dataset_bytes(ds) != dataset_bytes(generate_depth_selective(small_spec(2))));
  DepthSelectiveSpec deeper = small_spec(1);
  deeper.depth = 2;
  const LabeledDataset d2 = generate_depth_selective(deeper);
  CHECK_FALSE(bit_equal(d2.images.values(), ds.images.values()));
  for (double v : d2.images.values()) CHECK(std::abs(v) < 1.0);  // tanh range
}

TEST_CASE("generator rejects invalid settings") {
  DepthSelectiveSpec s = small_spec(0);
  s.classes = 1;
  CHECK_THROWS_AS(generate_depth_selective(s), ConfigError);
  s = small_spec(0);
  s.n = 0;
  CHECK_THROWS_AS(generate_depth_selective(s), ConfigError);
  s = small_spec(0);
  s.patch_size = 5;
  CHECK_THROWS_AS(generate_depth_selective(s), ConfigError);
  s = small_spec(0);
  s.noise = -1.0;
  CHECK_THROWS_AS(generate_depth_selective(s), ConfigError);
}

TEST_CASE("depth zero is linearly separable") {
  DepthSelectiveSpec s;  // the 32x32x3, 500-sample toy task
  s.seed = 0;
  const double acc = nearest_mean_accuracy(generate_depth_selective(s));
  MESSAGE("nearest-mean train accuracy at depth 0: " << acc);
  CHECK(acc >= 0.9);
}

TEST_CASE("dataset file round trip") {
  LabeledDataset ds = generate_depth_selective(small_spec(3, 30));
  ds.split = "custom-tag";
  const std::string path = scratch_file("rt.gpvd");
  save_dataset(path, ds);
  const LabeledDataset back = load_dataset(path);
  CHECK(back.split == "custom-tag");
  CHECK(back.classes == ds.classes);
  CHECK(back.labels == ds.labels);
  CHECK(back.images.shape() == ds.images.shape());
  CHECK(bit_equal(back.images.values(), ds.images.values()));
  CHECK(dataset_bytes(back) == read_file(path));
  // 8 magic + 4 version + 4 + tag + 5·8 dims/classes + 8 payload size.
  CHECK(read_file(path).size() == 8 + 4 + 4 + 10 + 40 + 8 + 8 * ds.images.numel() + 4 * 30);
}

TEST_CASE("dataset file errors are distinct") {
  const LabeledDataset ds = generate_depth_selective(small_spec(4, 12));
  const std::string bytes = dataset_bytes(ds);
  const std::size_t dims = 8 + 4 + 4 + ds.split.size();

  std::string bad = bytes;
  bad[3] = '?';
  CHECK_THROWS_AS(dataset_from_bytes(bad), MagicError);
  bad = bytes;
  bad[8] = 2;
  CHECK_THROWS_AS(dataset_from_bytes(bad), VersionError);
  CHECK_THROWS_AS(dataset_from_bytes(bytes.substr(0, bytes.size() - 1)), TruncationError);
  CHECK_THROWS_AS(dataset_from_bytes(bytes.substr(0, 10)), TruncationError);
  CHECK_THROWS_AS(dataset_from_bytes(bytes + std::string(4, '\0')), CorruptionError);

  bad = bytes;
  put_u64(bad, dims, 13);  // n disagrees with the payload length
  CHECK_THROWS_AS(dataset_from_bytes(bad), CorruptionError);
  bad = bytes;
  put_u64(bad, dims + 40, 12345);  // payload length field
  CHECK_THROWS_AS(dataset_from_bytes(bad), CorruptionError);
  bad = bytes;
  put_u64(bad, dims + 32, 3);  // classes below an existing label
  CHECK_THROWS_AS(dataset_from_bytes(bad), CorruptionError);

  CHECK_THROWS_AS(load_dataset(scratch_file("does-not-exist.gpvd")), IoError);
  // Every format error is also an IoError.
  CHECK_THROWS_AS(dataset_from_bytes(bytes.substr(0, 10)), IoError);
}

TEST_CASE("split: sizes, coverage, stratification, determinism") {
  const LabeledDataset ds = generate_depth_selective(small_spec(5, 100));
  const auto [train, val] = split_dataset(ds, 0.8, 9);
  CHECK(train.size() == 80);
  CHECK(val.size() == 20);
  CHECK(train.split == "train");
  CHECK(val.split == "val");

  // Union is the original multiset of (image, label) rows.
  const std::size_t row = ds.images.numel() / ds.size();
  auto rows_of = [&](const LabeledDataset& d) {
    std::multiset<std::pair<std::int32_t, std::vector<double>>> out;
    const auto v = d.images.values();
    for (std::size_t i = 0; i < d.size(); ++i)
      out.insert({d.labels[i], std::vector<double>(v.begin() + i * row, v.begin() + (i + 1) * row)});
    return out;
  };
  auto all = rows_of(train);
  const auto rest = rows_of(val);
  all.insert(rest.begin(), rest.end());
  CHECK(all == rows_of(ds));

  const auto tc = train.class_counts(), vc = val.class_counts(), oc = ds.class_counts();
  for (std::size_t c = 0; c < ds.classes; ++c) {
    CHECK(tc[c] + vc[c] == oc[c]);
    CHECK(std::abs(static_cast<double>(tc[c]) - 0.8 * static_cast<double>(oc[c])) <= 1.0);
  }

  const auto [again, _] = split_dataset(ds, 0.8, 9);
  CHECK(dataset_bytes(again) == dataset_bytes(train));
  const auto [other, __] = split_dataset(ds, 0.8, 10);
  CHECK(dataset_bytes(other) != dataset_bytes(train));

  for (double f : {0.0, 1.0, -0.5, 2.0, std::nan("")}) CHECK_THROWS_AS(split_dataset(ds, f, 0), DomainError);
  CHECK_THROWS_AS(split_dataset(ds, 0.01, 0), ConfigError);
}

TEST_CASE("subset and validation") {
  const LabeledDataset ds = generate_depth_selective(small_spec(6, 20));
  const LabeledDataset s = ds.subset({4, 1});
  CHECK(s.labels == std::vector<std::int32_t>{ds.labels[4], ds.labels[1]});
  const std::size_t row = ds.images.numel() / ds.size();
  CHECK(bit_equal(s.images.values().subspan(0, row), ds.images.values().subspan(4 * row, row)));
  CHECK_THROWS_AS(ds.subset({20}), BoundsError);
  CHECK_THROWS_AS(ds.subset({}), ConfigError);

  LabeledDataset bad = ds;
  bad.labels[0] = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ds;
  bad.labels.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
