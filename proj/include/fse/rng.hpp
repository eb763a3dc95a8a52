#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "fse/errors.hpp"

namespace fse {

// splitmix64 step, used to derive independent child seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(base ^ mix_seed(a)) ^ mix_seed(b));
}

// Seeded generator. All randomness in the library flows through instances of
// this class; there is no ambient global RNG. The draw helpers avoid
// std:: distributions so sequences stay stable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    FSE_CHECK(n > 0, ConfigError, "uniform_index: empty range");
    return gen_() % n;
  }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
    FSE_CHECK(hi >= lo, ConfigError, "uniform_int: bad range");
    return lo + std::int64_t(uniform_index(std::uint64_t(hi - lo + 1)));
  }

  bool bernoulli(double p = 0.5) { return uniform() < p; }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    FSE_CHECK(!is.fail(), FormatError, "rng state: unparseable payload");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace fse
