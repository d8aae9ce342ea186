#pragma once

#include "motiongrpo/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace mgrpo {

namespace detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based splittable generator.
///
/// The n-th draw is a pure function of (key, n). Children are derived from the
/// key alone, so a child stream never depends on how many values the parent
/// has already produced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(detail::mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

  Rng child(std::string_view label) const { return from_key(detail::mix64(key_ ^ detail::fnv1a(label))); }
  Rng child(std::uint64_t index) const {
    return from_key(detail::mix64(key_ + detail::mix64(index + 0x9E3779B97F4A7C15ULL)));
  }
  template <typename... Rest>
  Rng child(std::uint64_t index, Rest... rest) const {
    return child(index).child(rest...);
  }

  std::uint64_t next_u64() noexcept {
    return detail::mix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  static Rng from_key(std::uint64_t key) {
    Rng r;
    r.key_ = key;
    return r;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Tensor sample_gaussian(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace mgrpo
