// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_COMMON_HPP
#define GATEKIT_COMMON_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gatekit {

using cxd = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;
inline constexpr cxd iu{0.0, 1.0};

// ---------------------------------------------------------------------------
// Error types named after the failure they report
// ---------------------------------------------------------------------------

struct DimensionMismatch : std::invalid_argument {
  explicit DimensionMismatch(const std::string& what)
      : std::invalid_argument("dimension mismatch: " + what) {}
};

struct OutOfRange : std::out_of_range {
  explicit OutOfRange(const std::string& what)
      : std::out_of_range("out of range: " + what) {}
};

struct NyquistViolation : std::invalid_argument {
  explicit NyquistViolation(const std::string& what)
      : std::invalid_argument("Nyquist violation: " + what) {}
};

struct IntegrationFailure : std::runtime_error {
  explicit IntegrationFailure(const std::string& what)
      : std::runtime_error("integration failure: " + what) {}
};

struct NotBracketed : std::runtime_error {
  explicit NotBracketed(const std::string& what)
      : std::runtime_error("optimum not bracketed: " + what) {}
};

struct OptimizationFailed : std::runtime_error {
  explicit OptimizationFailed(const std::string& what)
      : std::runtime_error("optimization failed: " + what) {}
};

struct FitDiverged : std::runtime_error {
  explicit FitDiverged(const std::string& what)
      : std::runtime_error("fit diverged: " + what) {}
};

struct UncalibratedGate : std::runtime_error {
  explicit UncalibratedGate(const std::string& what)
      : std::runtime_error("uncalibrated gate: " + what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what)
      : std::runtime_error("config error: " + what) {}
};

struct IoFailure : std::runtime_error {
  explicit IoFailure(const std::string& what)
      : std::runtime_error("io failure: " + what) {}
};

// ---------------------------------------------------------------------------
// Deterministic seed derivation: every random stream in the artifact is keyed
// by (base seed, task tag, task index) so that results are independent of
// evaluation order and degree of parallelism.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& tag,
                                 std::uint64_t index = 0) {
  return splitmix64(fnv1a64(tag, base ^ 0x9e3779b97f4a7c15ull) + index);
}

// Uniform and normal draws built from raw engine words, so results do not
// depend on the standard library's distribution implementations.
template <class Rng>
double uniform_sample(Rng& rng) {
  return double((rng() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
}

template <class Rng>
double gaussian_sample(Rng& rng) {
  const double u1 = uniform_sample(rng);
  const double u2 = uniform_sample(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
}

}  // namespace gatekit

#endif
