#pragma once

#include <array>
#include <cstdint>

#include "ardsparse/tensor.hpp"

namespace ardsparse {

// Counter-based generator (Philox4x32-10). A state is (seed, stream, counter);
// streams are derived deterministically with split(), so a layer or a step can
// own an independent sequence without sharing mutable state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept;

  // Child generator for sub-stream `id`. Does not advance *this.
  Rng split(std::uint64_t id) const noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() noexcept;
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound) noexcept;
  double normal() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  unsigned block_pos_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// One Philox4x32-10 block; exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key) noexcept;

// i.i.d. N(0,1) samples; advances rng.
Tensor sample_standard_normal(Rng& rng, const Shape& shape);

}  // namespace ardsparse
