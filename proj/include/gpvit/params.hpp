#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gpvit/tensor.hpp"

namespace gpvit {

/// Names of the parameters an optimizer may update.
using TrainableMask = std::set<std::string>;

/// Named parameter map, iterated in name order so every serialization and
/// every reduction over parameters is deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  /// Throws ConfigError naming `name` when absent.
  const Tensor& get(const std::string& name) const;

  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Total number of scalars, optionally restricted to `mask`.
  std::size_t scalar_count() const;
  std::size_t scalar_count(const TrainableMask& mask) const;

  /// Copy whose leaves require grad exactly when their name is in `mask`.
  ParamStore with_trainable(const TrainableMask& mask) const;
  /// Copy with every leaf frozen.
  ParamStore frozen() const;

  /// FNV-1a over names, shapes and value bytes of the selected parameters.
  std::uint64_t fingerprint(const std::set<std::string>* only = nullptr) const;

 private:
  std::map<std::string, Tensor> params_;
};

std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace gpvit
