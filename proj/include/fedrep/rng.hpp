#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace fedrep {

// SplitMix64 stream. The whole generator state is one 64-bit word, which keeps
// checkpoints trivial and guarantees bit-identical sequences on every platform
// (the std distributions make no such promise). Quality is plenty for
// simulation sampling.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. No cached second value, so the stream
  // state stays a single word.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Uniform over {0, ..., n-1}, exact (rejection sampling, no modulo bias).
  int uniform_int(int n) {
    if (n < 1) throw std::invalid_argument("uniform_int: n must be >= 1");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t rem = (0 - un) % un;  // 2^64 mod n
    std::uint64_t u = next_u64();
    if (rem != 0) {
      while (u >= 0 - rem) u = next_u64();
    }
    return static_cast<int>(u % un);
  }

  // Index draw from an explicit probability vector. Consumes one uniform.
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double c = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      c += probs[i];
      if (u < c) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  bool operator==(const RandomStream&) const = default;

private:
  std::uint64_t state_;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Stream for a numbered substream of a master seed. Stream i depends only on
// (master, i), so adding agents never perturbs existing agents' randomness.
// Initial states are scrambled far apart; overlap between two substreams
// within any realistic draw budget has vanishing probability.
inline RandomStream derive_stream(std::uint64_t master, std::uint64_t id) {
  const std::uint64_t s =
      detail::mix64(master ^ detail::mix64(id * 0x9e6c63d0876a9a67ULL + 1));
  return RandomStream(s);
}

}  // namespace fedrep
