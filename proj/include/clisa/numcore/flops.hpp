#pragma once

#include <cstdint>

namespace clisa::flops {

// Per-thread counter of floating point operations performed by forward kernels.
// Backward passes are not counted.
inline thread_local std::uint64_t counter = 0;

inline void add(std::uint64_t n) { counter += n; }

/// Measures operations performed while alive.
class Scope {
 public:
  Scope() : start_(counter) {}
  std::uint64_t elapsed() const { return counter - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace clisa::flops
