// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "gatekit/pulses.hpp"

using namespace gatekit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double simpson(double a, double b, int n, const auto& f) {
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("Blackman window has the standard shape and moments", "[pulses]") {
  REQUIRE_THAT(blackman(0.0), WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(blackman(1.0), WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(blackman(0.5), WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(blackman(0.25), WithinAbs(0.34, 1e-15));
  REQUIRE(blackman(-0.1) == 0.0);
  REQUIRE(blackman(1.1) == 0.0);

  const double mean = simpson(0.0, 1.0, 2000, [](double x) { return blackman(x); });
  const double sq = simpson(0.0, 1.0, 2000, [](double x) {
    const double w = blackman(x);
    return w * w;
  });
  REQUIRE_THAT(mean, WithinAbs(blackman_mean, 1e-12));
  REQUIRE_THAT(sq, WithinAbs(blackman_sq_mean, 1e-12));
}

TEST_CASE("composite pulse carries the half-full-half segment layout", "[pulses]") {
  const double t_pi = 130e-6;
  const double peak = pi / (blackman_mean * t_pi);
  const CompositePulse p = build_yxy(peak);

  REQUIRE(p.segments.size() == 3);
  REQUIRE_THAT(p.segments[0].duration, WithinRel(65e-6, 1e-12));
  REQUIRE_THAT(p.segments[1].duration, WithinRel(130e-6, 1e-12));
  REQUIRE_THAT(p.segments[2].duration, WithinRel(65e-6, 1e-12));
  REQUIRE_THAT(p.duration(), WithinRel(260e-6, 1e-12));
  REQUIRE_THAT(peak / two_pi, WithinRel(9157.509, 1e-4));

  REQUIRE_THAT(p.segments[0].phase, WithinAbs(pi / 2, 1e-15));
  REQUIRE_THAT(p.segments[1].phase, WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(p.segments[2].phase, WithinAbs(pi / 2, 1e-15));

  REQUIRE_THAT(p.area(), WithinRel(2.0 * pi, 1e-12));
  const double mid_area = simpson(65e-6, 195e-6, 4000, [&](double t) { return p.envelope(t); });
  REQUIRE_THAT(mid_area, WithinRel(pi, 1e-9));

  REQUIRE_THAT(p.envelope(0.0), WithinAbs(0.0, 1e-9));
  REQUIRE_THAT(p.envelope(65e-6), WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(p.envelope(130e-6), WithinRel(peak, 1e-12));
  REQUIRE(p.envelope(261e-6) == 0.0);

  REQUIRE(p.segment_at(1e-6) == 0);
  REQUIRE(p.segment_at(100e-6) == 1);
  REQUIRE_THAT(p.phase_at(200e-6), WithinAbs(pi / 2, 1e-15));

  REQUIRE_THROWS_AS(build_yxy(0.0), OutOfRange);
}

TEST_CASE("phase profile evaluates the modulated ramp", "[pulses]") {
  const UvPulseParams p{130e-9, two_pi * 9.4e6, 0.7, two_pi * 8.0e6, 0.3, two_pi * 1.0e6};
  const double t = 40e-9;
  const double s = t - 65e-9;
  const double expect = 0.3 + 0.7 * std::sin(two_pi * 8.0e6 * s) + two_pi * 1.0e6 * s;
  REQUIRE_THAT(phase_profile_eval(p, t), WithinAbs(expect, 1e-12));

  // The chirp is antisymmetric about mid-pulse once the carrier offset is
  // removed, and the carrier enters additively.
  UvPulseParams q = p;
  q.detuning = 0.0;
  const double lo = phase_profile_eval(q, 65e-9 - 20e-9) - q.phase0;
  const double hi = phase_profile_eval(q, 65e-9 + 20e-9) - q.phase0;
  REQUIRE_THAT(lo + hi, WithinAbs(0.0, 1e-12));
  UvPulseParams shifted = p;
  shifted.phase0 += 1.25;
  REQUIRE_THAT(phase_profile_eval(shifted, t) - phase_profile_eval(p, t),
               WithinAbs(1.25, 1e-12));

  REQUIRE_THROWS_AS(phase_profile_eval(p, -1e-9), OutOfRange);
  REQUIRE_THROWS_AS(phase_profile_eval(p, 131e-9), OutOfRange);
}

TEST_CASE("PSD table loads files and interpolates log-log", "[pulses]") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "psd_roundtrip.txt";
  {
    std::ofstream out(path);
    out << "# frequency [Hz]   S_nu [Hz^2/Hz]\n";
    out << "\n";
    out << "10 1e4  # low corner\n";
    out << "1000 1e2\n";
  }
  const PsdTable psd = PsdTable::from_file(path.string());
  REQUIRE(psd.size() == 2);
  REQUIRE_THAT(psd.min_freq(), WithinAbs(10.0, 1e-12));
  REQUIRE_THAT(psd.max_freq(), WithinAbs(1000.0, 1e-12));

  REQUIRE_THAT(psd(100.0), WithinRel(1e3, 1e-9));
  REQUIRE_THAT(psd(10.0), WithinRel(1e4, 1e-12));
  REQUIRE_THAT(psd(1.0), WithinRel(1e4, 1e-12));
  REQUIRE(psd(2000.0) == 0.0);
  REQUIRE(psd(0.0) == 0.0);
  std::remove(path.string().c_str());

  REQUIRE_THROWS_AS(PsdTable::from_file("/nonexistent/psd.txt"), IoFailure);
  REQUIRE_THROWS_AS(PsdTable::from_points({-1.0}, {1.0}), ConfigError);
  REQUIRE_THROWS_AS(PsdTable::from_points({1.0, 2.0}, {1.0}), ConfigError);
}

TEST_CASE("malformed PSD rows are rejected", "[pulses]") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "psd_malformed.txt";
  {
    std::ofstream out(path);
    out << "10 1e4\n";
    out << "oops\n";
  }
  REQUIRE_THROWS_AS(PsdTable::from_file(path.string()), ConfigError);
  std::remove(path.string().c_str());
}

TEST_CASE("phase noise synthesis is seeded and reproducible", "[pulses]") {
  const PsdTable psd = PsdTable::from_points({10.0, 1e6}, {1.0, 1.0});
  const NoiseTrajectory a = sample_phase_noise(psd, 1e-3, 1e-5, 42);
  const NoiseTrajectory b = sample_phase_noise(psd, 1e-3, 1e-5, 42);
  const NoiseTrajectory c = sample_phase_noise(psd, 1e-3, 1e-5, 43);
  REQUIRE(a.samples == b.samples);
  REQUIRE(a.samples != c.samples);
  REQUIRE(a.samples.size() == 101);
  REQUIRE_THAT(a.duration(), WithinRel(1e-3, 1e-12));

  const double mid = a.at(1.5e-5);
  REQUIRE_THAT(mid, WithinAbs(0.5 * (a.samples[1] + a.samples[2]), 1e-12));
  REQUIRE_THAT(a.at(-1.0), WithinAbs(a.samples.front(), 1e-12));
  REQUIRE_THAT(a.at(1.0), WithinAbs(a.samples.back(), 1e-12));
}

TEST_CASE("white phase noise reproduces the target variance", "[pulses]") {
  // S_nu ∝ f² keeps S_phi = S_nu/f² flat, so the phase variance is
  // 2 S_phi f_nyquist; the f² law is exact under log-log interpolation.
  const double c = 1e-12;
  const PsdTable psd = PsdTable::from_points({1.0, 1e6}, {c, c * 1e12});
  REQUIRE_THAT(psd(350.0), WithinRel(c * 350.0 * 350.0, 1e-9));

  const double duration = 1e-2, dt = 1e-5;
  const NoiseTrajectory tr = sample_phase_noise(psd, duration, dt, 7);
  double mean = 0.0, var = 0.0;
  for (double v : tr.samples) mean += v;
  mean /= double(tr.samples.size());
  for (double v : tr.samples) var += (v - mean) * (v - mean);
  var /= double(tr.samples.size());

  const double expect = 2.0 * c * (1.0 / (2.0 * dt));
  REQUIRE_THAT(var, WithinRel(expect, 0.3));
}

TEST_CASE("noise synthesis rejects unusable sampling grids", "[pulses]") {
  const PsdTable psd = PsdTable::from_points({10.0}, {1.0});
  REQUIRE_THROWS_AS(sample_phase_noise(psd, 1e-3, 0.0, 1), NyquistViolation);
  REQUIRE_THROWS_AS(sample_phase_noise(psd, 1e-6, 1e-5, 1), NyquistViolation);
  REQUIRE_NOTHROW(sample_frequency_noise(psd, 1e-3, 1e-5, 1));
}
