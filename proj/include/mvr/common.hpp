#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mvr {

/// Error categories; the CLI maps these onto process exit codes.
enum class errc {
  parameter,        // bad arguments or configuration
  invalid_signal,   // malformed or non-finite signal data
  data,             // dataset / file / container problems
  bad_magic,        // container header magic does not match
  truncated,        // container payload shorter than the header promises
  version_mismatch, // container format version not supported
  missing_file,     // manifest references a file that does not exist
  numeric,          // non-finite values produced during computation
  degenerate,       // zero-variance and similar degeneracies
  no_pulse,         // no spectral power inside the heart-rate band
};

class error : public std::runtime_error {
 public:
  error(errc kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  errc kind() const noexcept { return kind_; }

 private:
  errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& what) { throw error(kind, what); }

inline void require(bool cond, errc kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

/// Round a double through float32. The volatile store keeps the optimizer
/// from folding the conversion away; values that must be float32-exact on
/// disk are quantized with this at generation time.
inline double quantize_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

/// splitmix64 step; used to derive stream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic RNG. The engine is mt19937_64 (bit-exact by the standard);
/// the distributions are hand-rolled so sampled streams do not depend on the
/// standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  /// Box-Muller; consumes two uniforms per pair, caches the spare.
  double normal(double mean = 0.0, double sigma = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + sigma * spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + sigma * r * std::cos(a);
  }

  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t integer(std::uint64_t n) {
    // modulo bias negligible for n << 2^64
    return engine_() % n;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mvr
