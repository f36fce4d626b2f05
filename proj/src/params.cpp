#include "gpvit/params.hpp"

#include <cstdio>

#include "gpvit/errors.hpp"

namespace gpvit {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  auto bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ParamStore::set(const std::string& name, Tensor value) {
  if (!value.defined()) throw StateError("parameter '" + name + "' is undefined");
  params_.insert_or_assign(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::size_t ParamStore::scalar_count(const TrainableMask& mask) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_)
    if (mask.count(name)) n += t.numel();
  return n;
}

ParamStore ParamStore::with_trainable(const TrainableMask& mask) const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    const bool want = mask.count(name) != 0;
    // A frozen leaf never accumulates a gradient, so it can be shared.
    const bool reuse = !want && t.is_leaf() && !t.requires_grad();
    out.params_.emplace(name, reuse ? t : t.as_leaf(want));
  }
  return out;
}

ParamStore ParamStore::frozen() const { return with_trainable({}); }

std::uint64_t ParamStore::fingerprint(const std::set<std::string>* only) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params_) {
    if (only && !only->count(name)) continue;
    h = fnv1a(name.data(), name.size(), h);
    for (std::size_t d : t.shape()) {
      const std::uint64_t d64 = d;
      h = fnv1a(&d64, sizeof d64, h);
    }
    h = fnv1a(t.values().data(), t.values().size_bytes(), h);
  }
  return h;
}

}  // namespace gpvit
