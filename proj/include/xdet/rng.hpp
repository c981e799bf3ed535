#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace xdet {

/// Seeded random stream with platform-independent draws.
///
/// The standard distributions are implementation-defined, so the same seed
/// can give different streams under different standard libraries. All draws
/// here are derived from a 64-bit SplitMix/xoshiro core with documented
/// arithmetic, which keeps fold files, samples and training logs identical
/// across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Uniform real in [0, 1) with 53 random bits.
  double uniform();

  /// Standard normal (Marsaglia polar method).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; does not advance this stream more than once.
  Rng fork(std::uint64_t stream_id);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace xdet
