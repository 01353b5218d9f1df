#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace calnr {

std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed from (seed, purpose, indices).
// Streams are split by purpose so that e.g. enabling rejection draws does
// not perturb the shuffle order.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view purpose,
                       std::uint64_t a = 0, std::uint64_t b = 0);

// xoshiro256** with explicit 4-word state. Produces identical sequences on
// every platform; the standard <random> distributions do not.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1).
  double uniform();

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  // Unbiased integer in [0, bound); bound must be >= 1.
  std::uint64_t below(std::uint64_t bound);

  // Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
  std::array<std::uint64_t, 4> state_{};
};

} // namespace calnr
