// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "gatekit/dynamics.hpp"
#include "gatekit/pulses.hpp"

using namespace gatekit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("adaptive integrator solves a complex linear ODE", "[dynamics]") {
  const cxd lambda{-1.0, 2.0};
  Vec y0(1);
  y0(0) = 1.0;
  const Vec y1 = integrate_adaptive(
      [&](double, const Vec& y, Vec& dy) { dy = lambda * y; }, y0, 0.0, 1.0, 1e-10, 1e-13);
  REQUIRE_THAT(y1(0).real(), WithinAbs(-0.1530918656742263, 1e-9));
  REQUIRE_THAT(y1(0).imag(), WithinAbs(0.3345118292392623, 1e-9));

  REQUIRE_THROWS_AS(integrate_adaptive([](double, const Vec&, Vec& dy) { dy.setZero(); }, y0,
                                       1.0, 0.0),
                    OutOfRange);
}

TEST_CASE("resonant drive produces textbook Rabi flopping", "[dynamics]") {
  const double omega = two_pi;
  const Mat h = 0.5 * omega * pauli_x();
  Mat rho0 = Mat::Zero(2, 2);
  rho0(0, 0) = 1.0;

  const Mat half = evolve(rho0, h, {}, {0.0, 0.25});
  REQUIRE_THAT(half(1, 1).real(), WithinAbs(0.5, 1e-8));
  const Mat full = evolve(rho0, h, {}, {0.0, 0.5});
  REQUIRE_THAT(full(1, 1).real(), WithinAbs(1.0, 1e-8));
  REQUIRE_THAT(full.trace().real(), WithinAbs(1.0, 1e-10));
}

TEST_CASE("Blackman pulse of area pi inverts a two-level atom", "[dynamics]") {
  const double tau = 1e-4;
  const double peak = pi / (blackman_mean * tau);
  auto h = [&](double t) { return Mat(0.5 * peak * blackman(t / tau) * pauli_x()); };
  Mat rho0 = Mat::Zero(2, 2);
  rho0(0, 0) = 1.0;
  const Mat out = evolve(rho0, h, {}, {0.0, tau}, 1e-10);
  REQUIRE_THAT(out(1, 1).real(), WithinAbs(1.0, 1e-8));
}

TEST_CASE("collapse operators damp population and coherence at the right rates",
          "[dynamics]") {
  const double gamma = 0.3, t = 2.0;
  Mat c = Mat::Zero(2, 2);
  c(0, 1) = std::sqrt(gamma);

  Mat excited = Mat::Zero(2, 2);
  excited(1, 1) = 1.0;
  const Mat out = evolve(excited, Mat(Mat::Zero(2, 2)), {c}, {0.0, t});
  REQUIRE_THAT(out(1, 1).real(), WithinAbs(std::exp(-gamma * t), 1e-9));
  REQUIRE_THAT(out(0, 0).real(), WithinAbs(1.0 - std::exp(-gamma * t), 1e-9));

  Mat plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  const Mat outc = evolve(plus, Mat(Mat::Zero(2, 2)), {c}, {0.0, t});
  REQUIRE_THAT(outc(0, 1).real(), WithinAbs(0.5 * std::exp(-gamma * t / 2.0), 1e-9));
}

TEST_CASE("sparse commutator entries reproduce the dense commutator", "[dynamics]") {
  const int d = 3;
  const std::vector<Entry> h_entries = {{0, 1, cxd{0.3, 0.1}}, {1, 0, cxd{0.3, -0.1}},
                                        {2, 2, cxd{0.7, 0.0}}};
  Mat h = Mat::Zero(d, d);
  for (const Entry& e : h_entries) h(e.r, e.c) = e.v;

  SparseGenerator gen(d * d);
  gen.add_static(commutator_entries(d, h_entries));

  Mat rho(d, d);
  rho << 0.5, cxd{0.1, 0.2}, 0.0, cxd{0.1, -0.2}, 0.3, 0.05, 0.0, 0.05, 0.2;
  Vec dy(d * d);
  gen.rhs(0.0, vec_density(rho), dy);
  const Mat dense = -iu * (h * rho - rho * h);
  REQUIRE((unvec_density(dy, d) - dense).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("sparse jump entries match the dense dissipator evolution", "[dynamics]") {
  const double gamma = 0.4, omega = 3.0, t1 = 0.7;
  Mat h = 0.5 * omega * pauli_x();
  Mat c = Mat::Zero(2, 2);
  c(0, 1) = std::sqrt(gamma);

  SparseGenerator gen(4);
  gen.add_static(commutator_entries(2, {{0, 1, 0.5 * omega}, {1, 0, 0.5 * omega}}));
  gen.add_static(jump_entries(2, 0, 1, gamma));

  Mat rho0 = Mat::Zero(2, 2);
  rho0(1, 1) = 1.0;
  const Vec y1 = gen.propagate(vec_density(rho0), 0.0, t1, 1e-10, 1e-13);
  const Mat dense = evolve(rho0, h, {c}, {0.0, t1}, 1e-10);
  REQUIRE((unvec_density(y1, 2) - dense).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("stacked columns propagate a whole channel in one solve", "[dynamics]") {
  const double gamma = 0.5, t1 = 0.9;
  SparseGenerator gen(4);
  gen.add_static(jump_entries(2, 0, 1, gamma));

  // Columns are the vectorized images of the four basis operators, so the
  // stacked solve advances the full superoperator at once.
  Vec y = vec_density(Mat::Identity(4, 4));
  y = gen.propagate(y, 0.0, t1, 1e-11, 1e-14);
  const Channel evolved{unvec_density(y, 4)};

  const double p = 1.0 - std::exp(-gamma * t1);
  Mat k0 = Mat::Zero(2, 2), k1 = Mat::Zero(2, 2);
  k0(0, 0) = 1.0;
  k0(1, 1) = std::sqrt(1.0 - p);
  k1(0, 1) = std::sqrt(p);
  const Channel expected = Channel::from_kraus({k0, k1});
  REQUIRE((evolved.superop() - expected.superop()).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE(evolved.is_trace_preserving(1e-8));
  REQUIRE(evolved.is_completely_positive(1e-8));
}

TEST_CASE("composite pulse suppresses Rabi amplitude errors", "[dynamics]") {
  auto transfer_error = [](const CompositePulse& p, double scale) {
    auto h = [&](double t) {
      const double om = scale * p.envelope(t);
      const double ph = p.phase_at(t);
      return Mat(0.5 * om * (std::cos(ph) * pauli_x() + std::sin(ph) * pauli_y()));
    };
    Mat rho0 = Mat::Zero(2, 2);
    rho0(0, 0) = 1.0;
    const Mat out = evolve(rho0, h, {}, {0.0, p.duration()}, 1e-10);
    return 1.0 - out(1, 1).real();
  };

  const double peak = pi / (blackman_mean * 130e-6);
  const CompositePulse yxy = build_yxy(peak);
  const CompositePulse plain{{{130e-6, peak, 0.0}}};

  REQUIRE_THAT(transfer_error(yxy, 1.0), WithinAbs(0.0, 1e-8));
  REQUIRE(transfer_error(yxy, 1.05) < 1e-4);
  REQUIRE(transfer_error(plain, 1.05) > 5e-3);
}

TEST_CASE("Debye-Waller factors follow the Laguerre ladder", "[dynamics]") {
  REQUIRE_THAT(debye_waller_factor(0, 0.0), WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(debye_waller_factor(0, 0.26), WithinAbs(0.966765, 1e-5));
  REQUIRE_THAT(debye_waller_factor(1, 0.26), WithinAbs(0.901412, 1e-5));
  REQUIRE_THAT(debye_waller_factor(2, 0.26), WithinAbs(0.838267, 1e-5));
  REQUIRE_THROWS_AS(debye_waller_factor(-1, 0.26), OutOfRange);
}

TEST_CASE("thermal averages weight the Bose-Einstein ladder", "[dynamics]") {
  REQUIRE_THAT(thermal_weight(0, 0.25), WithinAbs(0.8, 1e-12));
  REQUIRE_THAT(thermal_weight(1, 0.25), WithinAbs(0.16, 1e-12));
  REQUIRE_THAT(thermal_weight(2, 0.25), WithinAbs(0.032, 1e-12));

  const double mean_n =
      thermal_average([](int n) { return double(n); }, 0.25, 1e-12);
  REQUIRE_THAT(mean_n, WithinAbs(0.25, 1e-9));

  const double mean_dw = thermal_average(
      [](int n) { return debye_waller_factor(n, 0.26); }, 0.25, 1e-12);
  REQUIRE_THAT(mean_dw, WithinAbs(0.950564, 1e-5));
}

TEST_CASE("Monte Carlo averaging reports mean and standard error", "[dynamics]") {
  int call = 0;
  const auto stats = monte_carlo_average(
      [&call](std::uint64_t) { return double(call++); }, 5, 123);
  REQUIRE(stats.n == 5);
  REQUIRE_THAT(stats.mean, WithinAbs(2.0, 1e-12));
  REQUIRE_THAT(stats.sem, WithinAbs(std::sqrt(2.5 / 5.0), 1e-12));

  // Derived sample seeds must not depend on evaluation context.
  std::vector<std::uint64_t> seen;
  monte_carlo_average(
      [&seen](std::uint64_t s) {
        seen.push_back(s);
        return 0.0;
      },
      3, 99);
  REQUIRE(seen == std::vector<std::uint64_t>{derive_seed(99, "mc", 0), derive_seed(99, "mc", 1),
                                             derive_seed(99, "mc", 2)});
}
