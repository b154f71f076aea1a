// SPDX-License-Identifier: Apache-2.0
//
// Laser-noise metrology: spin-lock relaxometry tying a frequency-noise
// spectral density to a measurable decay rate, plus weighted fits for the
// standard coherence decay shapes (Ramsey, echo, lifetime, spin lock).

#ifndef GATEKIT_NOISEMETRICS_HPP
#define GATEKIT_NOISEMETRICS_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gatekit/common.hpp"
#include "gatekit/pulses.hpp"

namespace gatekit {

// One point of a measured decay curve.
struct TimePoint {
  double t = 0.0;  // s
  double value = 0.0;
  double sem = 0.0;
};

// One point of a frequency-noise spectral density.
struct PsdPoint {
  double f = 0.0;     // Hz
  double s_nu = 0.0;  // Hz^2/Hz
};

// Spin-lock relaxometry outcome at one drive strength.
struct SpinLockResult {
  double rabi_y = 0.0;         // rad/s
  double gamma = 0.0;          // 1/s
  double t1_correction = 0.0;  // s
};

enum class CoherenceKind { RamseyGaussian, EchoGaussian, ExpLifetime, SpinLockExp };

struct CoherenceFit {
  CoherenceKind kind = CoherenceKind::RamseyGaussian;
  double timescale = 0.0;    // s
  double uncertainty = 0.0;  // s
};

namespace detail {

// Decay shapes written in rate form v(t; k) with k = 1/timescale, so a flat
// data set drives k toward zero instead of pushing a timescale to infinity.
inline double decay_value(CoherenceKind kind, double t, double k) {
  switch (kind) {
    case CoherenceKind::RamseyGaussian:
    case CoherenceKind::EchoGaussian: {
      const double x = k * t;
      return std::exp(-0.5 * x * x);
    }
    case CoherenceKind::ExpLifetime:
      return std::exp(-k * t);
    case CoherenceKind::SpinLockExp:
      return 0.5 * (1.0 + std::exp(-k * t));
  }
  return 0.0;
}

inline double decay_slope(CoherenceKind kind, double t, double k) {
  switch (kind) {
    case CoherenceKind::RamseyGaussian:
    case CoherenceKind::EchoGaussian:
      return -k * t * t * std::exp(-0.5 * k * k * t * t);
    case CoherenceKind::ExpLifetime:
      return -t * std::exp(-k * t);
    case CoherenceKind::SpinLockExp:
      return -0.5 * t * std::exp(-k * t);
  }
  return 0.0;
}

// Value the shape takes at t = 1/k, used to seed the rate from the first
// threshold crossing in the data.
inline double crossing_level(CoherenceKind kind) {
  switch (kind) {
    case CoherenceKind::RamseyGaussian:
    case CoherenceKind::EchoGaussian:
      return std::exp(-0.5);
    case CoherenceKind::ExpLifetime:
      return std::exp(-1.0);
    case CoherenceKind::SpinLockExp:
      return 0.5 * (1.0 + std::exp(-1.0));
  }
  return 0.5;
}

struct RateFit {
  double k = 0.0;
  double sigma_k = 0.0;
};

// Single-parameter weighted least squares with a damped Gauss-Newton loop.
inline RateFit fit_rate(std::vector<TimePoint> pts, CoherenceKind kind) {
  std::sort(pts.begin(), pts.end(),
            [](const TimePoint& a, const TimePoint& b) { return a.t < b.t; });
  for (const auto& p : pts)
    if (!(p.t >= 0.0) || !std::isfinite(p.value))
      throw OutOfRange("decay samples need non-negative times and finite values");

  const double level = crossing_level(kind);
  double k = 0.0;
  for (const auto& p : pts)
    if (p.value < level && p.t > 0.0) {
      k = 1.0 / p.t;
      break;
    }
  if (k == 0.0) k = 0.1 / std::max(pts.back().t, 1e-300);

  std::vector<double> w(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) w[i] = 1.0 / std::max(pts[i].sem, 1e-9);

  const auto chi2_of = [&](double kk) {
    double c = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double r = w[i] * (pts[i].value - decay_value(kind, pts[i].t, kk));
      c += r * r;
    }
    return c;
  };

  double chi2 = chi2_of(k);
  double lambda = 1e-3;
  for (int it = 0; it < 200; ++it) {
    double a = 0.0, g = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double j = w[i] * decay_slope(kind, pts[i].t, k);
      const double r = w[i] * (pts[i].value - decay_value(kind, pts[i].t, k));
      a += j * j;
      g += j * r;
    }
    if (!(a > 0.0)) break;
    const double step = g / (a * (1.0 + lambda));
    if (!std::isfinite(step)) throw FitDiverged("decay fit produced a non-finite step");
    const double trial = k + step;
    const double trial_chi2 = chi2_of(trial);
    if (trial_chi2 <= chi2) {
      const bool done = std::abs(step) <= 1e-12 * std::max(std::abs(k), 1e-12);
      k = trial;
      chi2 = trial_chi2;
      lambda = std::max(lambda * 0.5, 1e-12);
      if (done) break;
    } else {
      lambda *= 4.0;
      if (lambda > 1e12) break;
    }
  }
  if (!std::isfinite(k) || !std::isfinite(chi2))
    throw FitDiverged("decay fit did not converge");

  double a = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double j = w[i] * decay_slope(kind, pts[i].t, k);
    a += j * j;
  }
  return {k, a > 0.0 ? 1.0 / std::sqrt(a) : std::numeric_limits<double>::infinity()};
}

// Runs fn(0..n-1) across a small thread pool; rethrows the first failure.
template <class Fn>
void parallel_indices(int n, int n_jobs, Fn&& fn) {
  const int workers = std::max(1, std::min(n_jobs, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr err;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

// Population returned to the pole after X(pi/2) - Y drive(T) - X(-pi/2),
// with a frequency-noise trajectory drawn from the table for each
// realization and the exact SU(2) step propagator. A positive finite t1
// shrinks the locked contrast by exp(-T/(2 t1)); any other t1 disables the
// correction. Times in the returned points are the simulation grid times
// nearest the requested durations.
inline std::vector<TimePoint> spinlock_forward(const PsdTable& psd, double rabi_y,
                                               std::vector<double> durations, double t1,
                                               int n_trajectories, std::uint64_t seed,
                                               int n_jobs = 1) {
  if (!(rabi_y > 0.0)) throw OutOfRange("spin-lock drive rate must be positive");
  if (durations.empty()) throw OutOfRange("spin-lock needs at least one duration");
  for (double t : durations)
    if (!(t > 0.0)) throw OutOfRange("spin-lock durations must be positive");
  if (n_trajectories < 1) throw OutOfRange("spin-lock needs at least one trajectory");

  std::sort(durations.begin(), durations.end());
  const double t_max = durations.back();
  const int n_steps = std::max(
      64, int(std::ceil(8.0 * std::max(psd.max_freq(), 2.0 / t_max) * t_max)));
  const double dt = t_max / double(n_steps);

  std::vector<int> mark(durations.size());
  for (std::size_t j = 0; j < durations.size(); ++j)
    mark[j] = std::clamp(int(std::lround(durations[j] / dt)), 1, n_steps);

  const bool with_t1 = t1 > 0.0 && std::isfinite(t1);
  std::vector<std::vector<double>> slots;
  slots.resize(std::size_t(n_trajectories));
  detail::parallel_indices(n_trajectories, n_jobs, [&](int traj) {
    const NoiseTrajectory nu =
        sample_frequency_noise(psd, t_max, dt, derive_seed(seed, "spinlock", std::uint64_t(traj)));
    std::vector<double> pole(durations.size(), 0.0);
    cxd a{1.0 / std::sqrt(2.0), 0.0};
    cxd b{0.0, -1.0 / std::sqrt(2.0)};
    std::size_t j = 0;
    for (int n = 0; n < n_steps && j < mark.size(); ++n) {
      const double delta = pi * (nu.samples[std::size_t(n)] + nu.samples[std::size_t(n) + 1]);
      const double norm = std::sqrt(rabi_y * rabi_y + delta * delta);
      const double theta = 0.5 * dt * norm;
      const double c = std::cos(theta);
      const double s = norm > 0.0 ? std::sin(theta) / norm : 0.0;
      const double sy = s * rabi_y;
      const double sz = s * delta;
      const cxd a2 = (c - iu * sz) * a - sy * b;
      const cxd b2 = sy * a + (c + iu * sz) * b;
      a = a2;
      b = b2;
      while (j < mark.size() && mark[j] == n + 1) {
        const cxd back = (a + iu * b) / std::sqrt(2.0);
        double p = std::norm(back);
        if (with_t1) p = 0.5 + (p - 0.5) * std::exp(-double(n + 1) * dt / (2.0 * t1));
        pole[j++] = p;
      }
    }
    slots[std::size_t(traj)] = std::move(pole);
  });

  std::vector<TimePoint> out(durations.size());
  for (std::size_t j = 0; j < durations.size(); ++j) {
    double mean = 0.0;
    for (const auto& s : slots) mean += s[j];
    mean /= double(n_trajectories);
    double var = 0.0;
    for (const auto& s : slots) var += (s[j] - mean) * (s[j] - mean);
    const double sem = n_trajectories > 1
                           ? std::sqrt(var / double(n_trajectories - 1) / double(n_trajectories))
                           : 0.0;
    out[j] = {double(mark[j]) * dt, mean, sem};
  }
  return out;
}

// Rate fit of the locked population, restricted to the initial window where
// the contrast still exceeds 1/e, with the fixed lifetime contribution
// subtracted from the fitted rate.
inline SpinLockResult spinlock_fit(const std::vector<TimePoint>& points, double rabi_y,
                                   double t1) {
  if (!(rabi_y > 0.0)) throw OutOfRange("spin-lock drive rate must be positive");
  if (points.size() < 4) throw OutOfRange("spin-lock fit needs at least 4 points");
  std::vector<TimePoint> pts = points;
  std::sort(pts.begin(), pts.end(),
            [](const TimePoint& a, const TimePoint& b) { return a.t < b.t; });
  const double floor_value = 0.5 * (1.0 + std::exp(-1.0));
  std::vector<TimePoint> window;
  for (const auto& p : pts)
    if (p.value >= floor_value) window.push_back(p);
  if (window.size() < 4) window.assign(pts.begin(), pts.begin() + 4);

  const detail::RateFit fit = detail::fit_rate(window, CoherenceKind::SpinLockExp);
  const bool with_t1 = t1 > 0.0 && std::isfinite(t1);
  const double correction = with_t1 ? 1.0 / (2.0 * t1) : 0.0;
  return {rabi_y, std::max(0.0, fit.k - correction), t1};
}

// Evaluates the relaxometry identity gamma = 2 pi^2 S_nu(f) at the drive
// frequency f = rabi_y / (2 pi).
inline PsdPoint spinlock_invert(double gamma, double rabi_y) {
  if (gamma < 0.0) throw OutOfRange("spin-lock decay rate must be non-negative");
  if (!(rabi_y > 0.0)) throw OutOfRange("spin-lock drive rate must be positive");
  return {rabi_y / two_pi, gamma / (2.0 * pi * pi)};
}

// Weighted least-squares fit of the declared decay shape; the timescale is
// the reciprocal of the fitted rate.
inline CoherenceFit coherence_fits(const std::vector<TimePoint>& data, CoherenceKind kind) {
  if (data.size() < 4) throw OutOfRange("coherence fit needs at least 4 points");
  const detail::RateFit fit = detail::fit_rate(data, kind);
  if (!(fit.k > 0.0)) throw FitDiverged("no positive decay rate fits the data");
  return {kind, 1.0 / fit.k, fit.sigma_k / (fit.k * fit.k)};
}

}  // namespace gatekit

#endif
