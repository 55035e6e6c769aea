#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

namespace gibscore {

//! SplitMix64 (Steele, Lea & Flood 2014). Every stochastic component draws
//! from this generator through the helpers below, so a seed reproduces the
//! same numbers on any platform. The standard <random> distributions are not
//! used because their output is implementation defined.
//!
//!   state += 0x9e3779b97f4a7c15
//!   z = state
//!   z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//!   z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//!   return z ^ (z >> 31)
class SplitMix64
{
public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) noexcept
    : state_(seed)
  {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept
  {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return next(); }

  std::uint64_t next() noexcept
  {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  //! Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept
  {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept
  {
    return lo + (hi - lo) * uniform();
  }

  //! Uniform integer in [0, n). Plain modulo reduction; the bias is below
  //! 2^-40 for every n used here.
  std::size_t below(std::size_t n) noexcept
  {
    return n == 0 ? 0 : static_cast<std::size_t>(next() % n);
  }

  //! Standard normal via Box-Muller (one draw per call, no caching).
  double normal() noexcept
  {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  //! Fisher-Yates shuffle driven by below().
  template<typename T>
  void shuffle(std::vector<T>& items) noexcept
  {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const noexcept { return state_; }

private:
  std::uint64_t state_;
};

} // namespace gibscore
