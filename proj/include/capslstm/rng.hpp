#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace capslstm {

// SplitMix64 (Steele, Lea, Flood 2014). Pure 64-bit integer arithmetic, so
// the stream is identical on every platform and compiler.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound) by rejection, no modulo bias.
  std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  std::uint64_t seed_state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  SeededRng mix(base ^ (stream * 0xD1B54A32D192ED03ULL));
  return mix.next_u64();
}

// Fisher-Yates with SeededRng::below, so permutations are portable.
template <typename Item>
void shuffle(std::span<Item> items, SeededRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace capslstm
