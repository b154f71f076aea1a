// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_PULSES_HPP
#define GATEKIT_PULSES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gatekit/common.hpp"

namespace gatekit {

// Blackman window on [0,1]: zero at both edges, unit peak at the center.
inline double blackman(double x) {
  if (x < 0.0 || x > 1.0) return 0.0;
  return 0.42 - 0.5 * std::cos(two_pi * x) + 0.08 * std::cos(2.0 * two_pi * x);
}

inline constexpr double blackman_mean = 0.42;       // ∫ w dx over one window
inline constexpr double blackman_sq_mean = 0.3046;  // ∫ w² dx over one window

// ---------------------------------------------------------------------------
// Shelving pulse: piecewise Blackman segments on the qubit-to-clock transition
// ---------------------------------------------------------------------------

struct PulseSegment {
  double duration;   // s
  double peak_rabi;  // rad/s
  double phase;      // drive phase, rad
};

struct CompositePulse {
  std::vector<PulseSegment> segments;

  double duration() const {
    double t = 0.0;
    for (const auto& s : segments) t += s.duration;
    return t;
  }

  int segment_at(double t) const {
    double t0 = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (t < t0 + segments[i].duration) return int(i);
      t0 += segments[i].duration;
    }
    return int(segments.size()) - 1;
  }

  // Instantaneous Rabi rate Ω(t); zero outside the pulse.
  double envelope(double t) const {
    if (t < 0.0) return 0.0;
    double t0 = 0.0;
    for (const auto& s : segments) {
      if (t <= t0 + s.duration) return s.peak_rabi * blackman((t - t0) / s.duration);
      t0 += s.duration;
    }
    return 0.0;
  }

  double phase_at(double t) const {
    if (segments.empty()) return 0.0;
    return segments[segment_at(t)].phase;
  }

  // ∫ Ω dt over the whole pulse.
  double area() const {
    double a = 0.0;
    for (const auto& s : segments) a += blackman_mean * s.peak_rabi * s.duration;
    return a;
  }
};

// Composite π pulse: a full-area segment flanked by two half-area segments
// driven 90° out of phase, which realizes -iX on the driven transition while
// cancelling pulse-area errors to first order.  The peak rate may be given
// directly, or derived from the duration of the π segment.
inline CompositePulse build_yxy(double peak_rabi, double segment_duration_pi = 0.0) {
  if (segment_duration_pi > 0.0) peak_rabi = pi / (blackman_mean * segment_duration_pi);
  if (!(peak_rabi > 0.0)) throw OutOfRange("peak Rabi rate must be positive");
  const double t_pi = pi / (blackman_mean * peak_rabi);
  return CompositePulse{{{t_pi / 2.0, peak_rabi, pi / 2.0},
                         {t_pi, peak_rabi, 0.0},
                         {t_pi / 2.0, peak_rabi, pi / 2.0}}};
}

// ---------------------------------------------------------------------------
// Rydberg pulse: square envelope with a modulated drive phase
// ---------------------------------------------------------------------------

struct UvPulseParams {
  double duration;         // s
  double rabi;             // rad/s
  double amp;              // phase modulation depth, rad
  double freq;             // modulation angular frequency, rad/s
  double phase0;           // additive drive phase, rad
  double detuning;         // linear phase ramp, rad/s
  double rise_time = 0.0;  // linear amplitude ramp at both edges, s
};

// Drive phase relative to mid-pulse: an antisymmetric sine chirp plus a
// linear ramp, offset by the carrier phase. The corresponding instantaneous
// detuning profile is symmetric about the pulse center.
inline double phase_profile_eval(const UvPulseParams& p, double t) {
  if (t < -1e-12 * p.duration || t > p.duration * (1.0 + 1e-12))
    throw OutOfRange("phase profile evaluated outside the pulse window");
  const double s = t - 0.5 * p.duration;
  return p.phase0 + p.amp * std::sin(p.freq * s) + p.detuning * s;
}

// Instantaneous Rabi rate of the square pulse, with optional linear edges.
inline double uv_rabi_at(const UvPulseParams& p, double t) {
  if (p.rise_time < 0.0 || p.rise_time > 0.5 * p.duration)
    throw ConfigError("rise time must lie in [0, duration/2]");
  if (t < 0.0 || t > p.duration) return 0.0;
  if (p.rise_time == 0.0) return p.rabi;
  if (t < p.rise_time) return p.rabi * t / p.rise_time;
  if (t > p.duration - p.rise_time) return p.rabi * (p.duration - t) / p.rise_time;
  return p.rabi;
}

// Dimensionless pulse coordinates (A, ω/Ω, φ, TΩ/2π, Δ/Ω).
using PulseTuple = std::array<double, 5>;

inline UvPulseParams pulse_from_tuple(const PulseTuple& x, double rabi,
                                      double rise_time = 0.0) {
  if (!(rabi > 0.0)) throw OutOfRange("Rabi rate must be positive");
  UvPulseParams p;
  p.rabi = rabi;
  p.amp = x[0];
  p.freq = x[1] * rabi;
  p.phase0 = x[2];
  p.duration = x[3] * two_pi / rabi;
  p.detuning = x[4] * rabi;
  p.rise_time = rise_time;
  if (!(p.duration > 0.0)) throw OutOfRange("pulse duration must be positive");
  return p;
}

inline PulseTuple pulse_to_tuple(const UvPulseParams& p) {
  if (!(p.rabi > 0.0)) throw OutOfRange("Rabi rate must be positive");
  return {p.amp, p.freq / p.rabi, p.phase0, p.duration * p.rabi / two_pi,
          p.detuning / p.rabi};
}

// ---------------------------------------------------------------------------
// Laser frequency noise
// ---------------------------------------------------------------------------

// Double-sided frequency-noise power spectral density S_nu(f) in Hz²/Hz,
// tabulated on an ascending frequency grid and interpolated log-log.
class PsdTable {
 public:
  static PsdTable from_points(std::vector<double> f, std::vector<double> s) {
    if (f.size() != s.size() || f.empty())
      throw ConfigError("PSD needs matching, non-empty frequency and density columns");
    std::vector<std::size_t> order(f.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return f[a] < f[b]; });
    PsdTable t;
    for (std::size_t i : order) {
      if (!(f[i] > 0.0)) throw ConfigError("PSD frequencies must be positive");
      if (s[i] < 0.0) throw ConfigError("PSD values must be non-negative");
      t.f_.push_back(f[i]);
      t.s_.push_back(s[i]);
    }
    return t;
  }

  // Two-column text: frequency [Hz] and S_nu [Hz²/Hz]; '#' starts a comment.
  static PsdTable from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open PSD file " + path);
    std::vector<double> f, s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream row(line);
      double fv, sv;
      if (row >> fv >> sv) {
        f.push_back(fv);
        s.push_back(sv);
      } else if (row.rdbuf()->in_avail() || !line.empty()) {
        std::istringstream probe(line);
        std::string tok;
        if (probe >> tok)
          throw ConfigError("PSD file " + path + ": malformed line " + std::to_string(lineno));
      }
    }
    if (f.empty()) throw ConfigError("PSD file " + path + " holds no data rows");
    return from_points(std::move(f), std::move(s));
  }

  // Flat below the first tabulated point, zero above the last.
  double operator()(double f) const {
    if (f <= 0.0) return 0.0;
    if (f <= f_.front()) return s_.front();
    if (f > f_.back()) return 0.0;
    const auto hi = std::upper_bound(f_.begin(), f_.end(), f);
    const std::size_t i = std::size_t(hi - f_.begin());
    const double f0 = f_[i - 1], f1 = f_[i], s0 = s_[i - 1], s1 = s_[i];
    if (s0 <= 0.0 || s1 <= 0.0) {
      const double w = (f - f0) / (f1 - f0);
      return s0 + w * (s1 - s0);
    }
    const double w = std::log(f / f0) / std::log(f1 / f0);
    return std::exp(std::log(s0) + w * (std::log(s1) - std::log(s0)));
  }

  double min_freq() const { return f_.front(); }
  double max_freq() const { return f_.back(); }
  std::size_t size() const { return f_.size(); }

 private:
  std::vector<double> f_, s_;
};

// One noise realization sampled on a uniform grid starting at t = 0.
struct NoiseTrajectory {
  double dt = 0.0;
  std::vector<double> samples;

  double duration() const {
    return samples.size() < 2 ? 0.0 : dt * double(samples.size() - 1);
  }

  double at(double t) const {
    if (samples.empty()) return 0.0;
    const double x = std::clamp(t / dt, 0.0, double(samples.size() - 1));
    const auto i = std::min(std::size_t(x), samples.size() - 2);
    const double w = x - double(i);
    return samples[i] * (1.0 - w) + samples[i + 1] * w;
  }
};

namespace detail {

// Sum-of-tones synthesis: tone spacing 1/(2 duration) so the realization is
// aperiodic over the window, truncated at the grid's Nyquist frequency.
// Tone amplitudes 2 sqrt(S_nu Δf) reproduce the double-sided density; for a
// phase trajectory each frequency tone is integrated, dividing by f.
inline NoiseTrajectory synthesize_noise(const PsdTable& psd, double duration, double dt,
                                        std::uint64_t seed, bool integrate_to_phase) {
  if (!(dt > 0.0)) throw NyquistViolation("sample step must be positive");
  if (!(duration >= 2.0 * dt))
    throw NyquistViolation("trajectory must span at least two sample steps");
  const double df = 1.0 / (2.0 * duration);
  const double f_nyq = 1.0 / (2.0 * dt);
  const int n_tones = int(std::min(f_nyq, psd.max_freq()) / df);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform_angle(0.0, two_pi);
  std::vector<double> amp(n_tones), omega(n_tones), chi(n_tones);
  for (int k = 0; k < n_tones; ++k) {
    const double f = df * double(k + 1);
    double a = 2.0 * std::sqrt(psd(f) * df);
    if (integrate_to_phase) a /= f;
    amp[k] = a;
    omega[k] = two_pi * f;
    chi[k] = uniform_angle(rng);
  }

  NoiseTrajectory out;
  out.dt = dt;
  const auto n_samples = std::size_t(std::ceil(duration / dt - 1e-9)) + 1;
  out.samples.assign(n_samples, 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double t = dt * double(n);
    double v = 0.0;
    for (int k = 0; k < n_tones; ++k) v += amp[k] * std::cos(omega[k] * t + chi[k]);
    out.samples[n] = v;
  }
  return out;
}

}  // namespace detail

// Laser phase excursion φ(t) in rad over [0, duration].
inline NoiseTrajectory sample_phase_noise(const PsdTable& psd, double duration, double dt,
                                          std::uint64_t seed) {
  return detail::synthesize_noise(psd, duration, dt, seed, true);
}

// Instantaneous frequency offset ν(t) in Hz over [0, duration].
inline NoiseTrajectory sample_frequency_noise(const PsdTable& psd, double duration, double dt,
                                              std::uint64_t seed) {
  return detail::synthesize_noise(psd, duration, dt, seed, false);
}

}  // namespace gatekit

#endif
