#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace tiacam {

/// Deterministic random source. All stochastic code in the library draws from
/// an explicitly threaded Rng; nothing reads hidden global state. The normal
/// and Gumbel generators are implemented directly on top of the raw 64-bit
/// stream so replay is stable regardless of standard-library internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x5eed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    int v = static_cast<int>(uniform() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  /// Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
  /// so the generator state fully determines the stream.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Standard Gumbel(0,1) sample, -log(-log(u)).
  double gumbel() {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
    return -std::log(-std::log(u));
  }

  /// Textual state round-trip, used by trainer checkpoints.
  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> gen_;
    if (is.fail()) throw std::invalid_argument("Rng: bad serialized state");
  }

  bool operator==(const Rng& o) const { return gen_ == o.gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace tiacam
