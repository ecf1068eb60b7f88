#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>

#include "marsnet/core/autograd.hpp"

namespace marsnet::model {

using ag::Param;
using ag::ParamKind;

/// Owns every parameter of a network. Storage is a deque so that references
/// held by layers stay valid as parameters are added.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<T>& add(const std::string& name, ParamKind kind, Shape shape) {
    if (index_.count(name)) fail_runtime("duplicate parameter '" + name + "'");
    Param<T>& p = params_.emplace_back();
    p.name = name;
    p.kind = kind;
    p.value = Tensor<T>(shape);
    p.grad = Tensor<T>(shape);
    index_[name] = params_.size() - 1;
    return p;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Param<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail_input("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Param<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail_input("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  /// Scalar count over trainable parameters whose name starts with `prefix`.
  std::size_t count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable() && p.name.rfind(prefix, 0) == 0) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// He-normal kernel: N(0, 2 / fan_in) with fan_in = in-per-group * k * k.
/// Values are drawn in double from a stream keyed by the parameter name, so a
/// float and a double model built from one seed hold the same numbers up to
/// rounding, and adding a parameter never shifts the others.
template <class T>
void init_kernel(Param<T>& p, std::uint64_t seed) {
  const Shape s = p.value.shape();
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double sd = std::sqrt(2.0 / fan_in);
  Rng rng(derive_seed(seed, p.name));
  for (auto& v : p.value.vec()) v = static_cast<T>(rng.normal(0.0, sd));
}

}  // namespace marsnet::model
