#pragma once

#include <map>
#include <string>
#include <string_view>

#include "ecoenc/autodiff/tensor.hpp"

namespace ecoenc::ad {

/// Name -> tensor map, iterated in sorted name order. Used for model
/// parameters, their gradients and optimizer moments.
class TensorMap {
 public:
  using Storage = std::map<std::string, Tensor, std::less<>>;

  /// Throws ContractError on a duplicate name.
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t total_numel() const;

  /// Same names and shapes, all values zero.
  TensorMap zeros_like() const;

  /// Element-wise `*this += other`; names and shapes must match.
  void accumulate(const TensorMap& other);
  void scale(double factor);

  Storage::const_iterator begin() const { return entries_.begin(); }
  Storage::const_iterator end() const { return entries_.end(); }
  Storage::iterator begin() { return entries_.begin(); }
  Storage::iterator end() { return entries_.end(); }

  friend bool operator==(const TensorMap&, const TensorMap&) = default;

 private:
  Storage entries_;
};

using Parameters = TensorMap;
using Gradients = TensorMap;

}  // namespace ecoenc::ad
