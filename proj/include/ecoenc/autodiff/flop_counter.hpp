#pragma once

#include <cstdint>

namespace ecoenc::ad {

/// Thread-local count of forward-pass FLOPs executed by instrumented ops.
///
/// Counting convention: a multiply-add is 2 FLOPs, so matmul of [m,k] by
/// [k,n] counts 2*m*k*n. Row-group and axis means count one FLOP per input
/// element. Elementwise ops, normalisation and softmax are not counted.
/// Backward passes are never counted.
class FlopCounter {
 public:
  static void add(std::uint64_t flops) noexcept;
  static std::uint64_t total() noexcept;
};

/// Measures the FLOPs counted on this thread during its lifetime.
class FlopScope {
 public:
  FlopScope() noexcept : start_(FlopCounter::total()) {}
  std::uint64_t elapsed() const noexcept { return FlopCounter::total() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace ecoenc::ad
