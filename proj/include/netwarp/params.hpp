#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "netwarp/autodiff.hpp"
#include "netwarp/tensor_io.hpp"

namespace netwarp {

using Rng = std::mt19937_64;

/// Zero-mean Gaussian tensor.
template <typename T>
Tensor<T> gaussian(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Named trainable tensors, kept in insertion order.
template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, Tensor<T> init) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter: " + name);
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.push_back(parameter(std::move(init)));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return vars_[it->second];
  }
  Var<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return vars_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return vars_.size(); }

  std::size_t parameter_count(const std::string& prefix = "") const {
    std::size_t total = 0;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (names_[i].starts_with(prefix)) total += vars_[i].value().size();
    }
    return total;
  }

  void zero_grad() {
    for (auto& v : vars_) v.zero_grad();
  }

  /// Deep copy (fresh nodes) converted to another precision.
  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      out.add(names_[i], vars_[i].value().template cast<U>());
    }
    return out;
  }

  ParamSet clone() const { return cast<T>(); }

  std::vector<ArchiveEntry> to_archive() const {
    std::vector<ArchiveEntry> entries;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      entries.emplace_back(names_[i], vars_[i].value().template cast<float>());
    }
    return entries;
  }

  static ParamSet from_archive(const std::vector<ArchiveEntry>& entries) {
    ParamSet out;
    for (const auto& [name, tensor] : entries) out.add(name, tensor.template cast<T>());
    return out;
  }

  /// Overwrites values of every entry present in `other` (shapes must agree).
  void assign_from(const ParamSet& other) {
    for (const auto& name : other.names()) {
      Var<T>& dst = get(name);
      require_same_shape(dst.shape(), other.get(name).shape(), name.c_str());
      dst.mutable_value() = other.get(name).value();
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters without a gradient are left untouched.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// `trainable` filters parameter names; null means all.
  void step(ParamSet<T>& params, const std::function<bool(const std::string&)>& trainable = {}) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : params.names()) {
      if (trainable && !trainable(name)) continue;
      Var<T>& p = params.get(name);
      if (!p.has_grad()) continue;
      auto& [m, v] = state_[name];
      if (m.empty()) {
        m.assign(p.value().size(), 0.0);
        v.assign(p.value().size(), 0.0);
      }
      auto w = p.mutable_value().data();
      const auto g = p.grad().data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = m[i] / c1, vh = v[i] / c2;
        w[i] = static_cast<T>(w[i] - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

}  // namespace netwarp
