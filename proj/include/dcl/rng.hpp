// Portable, splittable pseudorandom streams.
//
// Sample streams must be bit-identical across standard libraries, so the
// engine and every transform (uniform, normal, categorical) are defined here
// rather than taken from <random>, whose distributions are
// implementation-defined.
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "dcl/error.hpp"

namespace dcl {

/// Engine name and version recorded in every report.
inline constexpr std::string_view kRngName = "xoshiro256**/splitmix64-v1";

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept { reseed(seed); }

  /// Independent stream keyed by (seed, path...). Used for per-trial and
  /// per-block substreams so results do not depend on execution order.
  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t mix = seed;
    std::uint64_t key = detail::splitmix64(mix);
    for (std::uint64_t p : path) {
      std::uint64_t s = key ^ (p + 0x632BE59BD9B4E019ULL);
      key = detail::splitmix64(s);
    }
    return Rng(key);
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = detail::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-and-reject).
  std::size_t index(std::size_t n) noexcept {
    const std::uint64_t range = n;
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * range;
    auto low = static_cast<std::uint64_t>(m);
    if (low < range) {
      const std::uint64_t threshold = (0 - range) % range;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * range;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::size_t>(m >> 64);
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

 private:
  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t st = seed;
    for (auto& word : s_) word = detail::splitmix64(st);
    has_spare_ = false;
  }

  std::uint64_t s_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Walker/Vose alias table: O(1) draws from a fixed categorical distribution.
/// Zero-probability outcomes are never returned.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(std::span<const double> probs) {
    const std::size_t n = probs.size();
    require(n > 0, Errc::InvalidArgument, "alias table needs at least one outcome");
    double total = 0.0;
    for (double p : probs) {
      require(p >= 0.0 && std::isfinite(p), Errc::InvalidArgument, "alias table weight must be finite and >= 0");
      total += p;
    }
    require(total > 0.0, Errc::InvalidArgument, "alias table weights sum to zero");

    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::size_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = probs[i] / total * static_cast<double>(n);
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      const std::size_t s = small.back();
      small.pop_back();
      const std::size_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::size_t i : large) prob_[i] = 1.0, alias_[i] = i;
    for (std::size_t i : small) prob_[i] = 1.0, alias_[i] = i;
    // Rounding leftovers must never make a zero-mass outcome reachable.
    for (std::size_t i = 0; i < n; ++i) {
      if (probs[i] == 0.0 && alias_[i] == i) {
        alias_[i] = first_positive(probs);
        prob_[i] = 0.0;
      }
    }
  }

  std::size_t size() const noexcept { return prob_.size(); }

  std::size_t operator()(Rng& rng) const noexcept {
    const std::size_t column = rng.index(prob_.size());
    return rng.uniform() < prob_[column] ? column : alias_[column];
  }

 private:
  static std::size_t first_positive(std::span<const double> probs) {
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (probs[i] > 0.0) return i;
    return 0;
  }

  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

}  // namespace dcl
