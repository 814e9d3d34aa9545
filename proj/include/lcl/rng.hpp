// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>

namespace lcl {

/// Counter-based random stream built on Philox4x32-10.
///
/// Every output is a pure function of (seed, stream id, counter), so a stream
/// can be split into independent children without touching shared state and
/// replays are bit-identical. All distributions are implemented here rather
/// than through <random> so results do not depend on the standard library.
class Rng {
 public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  /// Child stream keyed by `id`. The parent is not advanced.
  Rng split(std::uint64_t id) const noexcept;
  Rng split(std::string_view name) const noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal (Box-Muller, second variate cached).
  double normal() noexcept;
  /// Uniform integer in [0, n). `n` must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) noexcept;

  /// Index drawn with probability proportional to `weights`.
  std::size_t categorical(std::span<const double> weights) noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  // UniformRandomBitGenerator
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept { return next_u32(); }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Philox4x32-10 block function. Exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// SplitMix64 finalizer; used to derive keys and stream ids.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace lcl
