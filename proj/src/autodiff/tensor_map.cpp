#include "ecoenc/autodiff/tensor_map.hpp"

#include "ecoenc/errors.hpp"

namespace ecoenc::ad {

void TensorMap::add(std::string name, Tensor value) {
  if (entries_.contains(name)) throw ContractError("duplicate tensor name '" + name + "'");
  entries_.emplace(std::move(name), std::move(value));
}

bool TensorMap::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

const Tensor& TensorMap::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown tensor '" + std::string(name) + "'");
  return it->second;
}

Tensor& TensorMap::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const TensorMap&>(*this).at(name));
}

std::size_t TensorMap::total_numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

TensorMap TensorMap::zeros_like() const {
  TensorMap out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

void TensorMap::accumulate(const TensorMap& other) {
  if (other.size() != size()) throw DimensionError("accumulate: tensor maps differ in size");
  for (auto& [name, t] : entries_) {
    const Tensor& o = other.at(name);
    if (o.shape() != t.shape()) throw DimensionError("accumulate: shape mismatch for " + name);
    auto dst = t.values();
    auto src = o.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

void TensorMap::scale(double factor) {
  for (auto& [name, t] : entries_)
    for (auto& v : t.values()) v *= factor;
}

}  // namespace ecoenc::ad
