#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace fedsam {

/// splitmix64 finalizer; used to fold identifiers into stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives a stream key from a master seed and an ordered list of ids.
/// Different id tuples give unrelated keys; the order of ids matters.
constexpr std::uint64_t derive_key(std::uint64_t master,
                                   std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = mix64(master ^ 0x5EEDF00DCAFEBABEull);
  for (std::uint64_t id : ids) h = mix64(h ^ mix64(id + 0x632BE59BD9B4E019ull));
  return h;
}

/// Philox4x32-10 counter-based generator.
///
/// The output is a pure function of (key, counter), so a stream can be
/// positioned anywhere without replaying earlier draws and two streams with
/// different keys never share state. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    if (lane_ == 0) refill();
    result_type out = (static_cast<std::uint64_t>(block_[2 * lane_]) << 32) |
                      block_[2 * lane_ + 1];
    lane_ = (lane_ + 1) % 2;
    return out;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }

  std::uint64_t key() const { return key_; }
  /// Number of 128-bit blocks consumed so far.
  std::uint64_t counter() const { return counter_; }

  /// Raw Philox4x32-10 block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key);

  friend bool operator==(const CounterRng& a, const CounterRng& b) {
    return a.key_ == b.key_ && a.counter_ == b.counter_ && a.lane_ == b.lane_ &&
           (a.lane_ == 0 || a.block_ == b.block_);
  }

 private:
  void refill();

  std::uint64_t key_;
  std::uint64_t counter_;
  std::array<std::uint32_t, 4> block_{};
  int lane_ = 0;
};

/// Standard normal deviate (Box-Muller, one value per two uniforms).
double standard_normal(CounterRng& rng);

/// Draws an index from a probability vector by inverse CDF. Entries with
/// zero probability are never returned.
std::size_t sample_categorical(std::span<const double> probs, CounterRng& rng);

}  // namespace fedsam
