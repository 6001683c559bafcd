#ifndef OPUSIM_RNG_HPP
#define OPUSIM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace opusim {

// mt19937_64 gives identical integer streams on every conforming
// implementation; the distribution mappings below are hand-rolled because
// std::uniform_real_distribution / std::normal_distribution are not
// guaranteed to produce the same sequences across standard libraries.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // uniform in (0, 1), safe for log()
  double uniform_open() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  uint64_t below(uint64_t n) {
    // modulo bias is irrelevant at the sizes used here (n << 2^64)
    return eng_() % n;
  }

  // Box-Muller; one fresh pair of uniforms per call keeps the stream
  // position independent of caller parity.
  double normal(double mean = 0.0, double sigma = 1.0) {
    double u1 = uniform_open();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double gumbel() {  // standard Gumbel(0,1)
    return -std::log(-std::log(uniform_open()));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent stream for trial i of a sweep; lets parallel
  // loops draw per-slot streams whose content is schedule-independent.
  static uint64_t mix(uint64_t seed, uint64_t i) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (i + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

private:
  std::mt19937_64 eng_;
};

}  // namespace opusim

#endif
