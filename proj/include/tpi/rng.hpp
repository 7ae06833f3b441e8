#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace tpi {

/// Philox-4x32-10 counter-based generator.
///
/// The output stream is a pure function of (seed, stream, position), so a
/// trial that owns `CounterRng(seed, trial_index)` draws the same numbers
/// no matter which worker thread runs it or in what order.  Satisfies
/// UniformRandomBitGenerator with 64-bit results.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Standard normal via Box-Muller; the second variate of each pair is
  /// cached.
  double normal() noexcept;
  /// Uniform integer in [0, bound).  `bound` must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a parent seed with a tag into an independent child seed
/// (SplitMix64 finalizer).  Used to give each experiment phase its own
/// key space.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

}  // namespace tpi
