// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/tensor.hpp"

namespace nuclr {

/// Named parameters with a gradient slot of identical shape per entry.
/// Iteration is lexicographic by name.
template <class T>
class ParamSet {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    require(!name.empty(), ErrorCode::ConfigError, "empty parameter name");
    require(!entries_.contains(name), ErrorCode::ConfigError, "duplicate parameter " + name);
    Tensor<T> grad(value.shape());
    auto [it, _] = entries_.emplace(name, Entry{std::move(value), std::move(grad)});
    return it->second.value;
  }

  bool contains(const std::string& name) const { return entries_.contains(name); }

  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& grad(const std::string& name) { return entry(name).grad; }
  const Tensor<T>& grad(const std::string& name) const { return entry(name).grad; }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorCode::IndexOutOfRange, "unknown parameter " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorCode::IndexOutOfRange, "unknown parameter " + name);
    return it->second;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) std::fill(e.grad.storage().begin(), e.grad.storage().end(), T(0));
  }

  /// Values only, same names and shapes (gradients zeroed).
  ParamSet clone_values() const {
    ParamSet out;
    for (const auto& [k, e] : entries_) out.add(k, e.value);
    return out;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [k, e] : entries_) out.add(k, e.value.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace nuclr
