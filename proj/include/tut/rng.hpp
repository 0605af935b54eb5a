#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace tut {

/// SplitMix64 finalizer; the mixing function behind every generator here.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based generator: the value at (key, counter) is a pure function,
/// so streams can be split without coordinating state.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal() {
    // Box-Muller; one draw per call keeps the stream position simple.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Per-run dropout randomness. Each named layer gets its own stream keyed by
/// (seed, name); a layer's masks do not depend on how many other layers exist.
class DropoutStreams {
 public:
  DropoutStreams() = default;
  explicit DropoutStreams(std::uint64_t seed) : seed_(seed) {}

  /// Returns the generator for the next call of layer `name`.
  CounterRng draw(std::string_view name) {
    std::uint64_t& calls = calls_[std::string(name)];
    const std::uint64_t key = mix64(seed_ ^ hash_name(name)) ^ mix64(calls++ + 0x51ed270b27ULL);
    return CounterRng(key);
  }

  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, std::uint64_t>& calls() const { return calls_; }

 private:
  std::uint64_t seed_ = 0;
  std::map<std::string, std::uint64_t> calls_;
};

}  // namespace tut
