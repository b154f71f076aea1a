// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_DYNAMICS_HPP
#define GATEKIT_DYNAMICS_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "gatekit/qops.hpp"

namespace gatekit {

// ---------------------------------------------------------------------------
// Adaptive Dormand-Prince 5(4) integration of dy/dt = rhs(t, y)
// ---------------------------------------------------------------------------

// `breakpoints` lists times (sorted ascending) the stepper must land on
// exactly, for right-hand sides that are continuous but lose smoothness at
// known instants, e.g. piecewise-linear noise trajectories.  Steps never
// straddle a breakpoint, so the error estimate always sees a smooth segment
// while the step size carries over from one segment to the next.
template <class Rhs>
Vec integrate_adaptive(Rhs&& rhs, Vec y, double t0, double t1, double rtol = 1e-9,
                       double atol = 1e-12,
                       const std::vector<double>& breakpoints = {}) {
  if (t1 < t0) throw OutOfRange("integration span must run forward");
  if (t1 == t0) return y;

  const Eigen::Index n = y.size();
  Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);

  double t = t0;
  double h = (t1 - t0) / 64.0;
  const double h_min = (t1 - t0) * 1e-14;
  const double t_eps = (t1 - t0) * 1e-12;
  bool fsal_ready = false;
  std::size_t steps = 0;
  std::size_t next_bp = 0;

  while (t < t1) {
    if (++steps > 20'000'000) throw IntegrationFailure("step budget exhausted");
    if (h < h_min) throw IntegrationFailure("step size underflow");
    while (next_bp < breakpoints.size() && breakpoints[next_bp] <= t + t_eps) ++next_bp;
    const double target = (next_bp < breakpoints.size() && breakpoints[next_bp] < t1 - t_eps)
                              ? breakpoints[next_bp]
                              : t1;
    const double h_planned = h;
    if (t + h > target) h = target - t;

    if (!fsal_ready) rhs(t, y, k1);

    ytmp = y + h * (1.0 / 5.0) * k1;
    rhs(t + h / 5.0, ytmp, k2);
    ytmp = y + h * ((3.0 / 40.0) * k1 + (9.0 / 40.0) * k2);
    rhs(t + 3.0 * h / 10.0, ytmp, k3);
    ytmp = y + h * ((44.0 / 45.0) * k1 - (56.0 / 15.0) * k2 + (32.0 / 9.0) * k3);
    rhs(t + 4.0 * h / 5.0, ytmp, k4);
    ytmp = y + h * ((19372.0 / 6561.0) * k1 - (25360.0 / 2187.0) * k2 +
                    (64448.0 / 6561.0) * k3 - (212.0 / 729.0) * k4);
    rhs(t + 8.0 * h / 9.0, ytmp, k5);
    ytmp = y + h * ((9017.0 / 3168.0) * k1 - (355.0 / 33.0) * k2 + (46732.0 / 5247.0) * k3 +
                    (49.0 / 176.0) * k4 - (5103.0 / 18656.0) * k5);
    rhs(t + h, ytmp, k6);
    ynew = y + h * ((35.0 / 384.0) * k1 + (500.0 / 1113.0) * k3 + (125.0 / 192.0) * k4 -
                    (2187.0 / 6784.0) * k5 + (11.0 / 84.0) * k6);
    rhs(t + h, ynew, k7);

    ytmp = h * ((35.0 / 384.0 - 5179.0 / 57600.0) * k1 +
                (500.0 / 1113.0 - 7571.0 / 16695.0) * k3 +
                (125.0 / 192.0 - 393.0 / 640.0) * k4 +
                (-2187.0 / 6784.0 + 92097.0 / 339200.0) * k5 +
                (11.0 / 84.0 - 187.0 / 2100.0) * k6 - (1.0 / 40.0) * k7);

    double err_sq = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = atol + rtol * std::max(std::abs(y(i)), std::abs(ynew(i)));
      const double e = std::abs(ytmp(i)) / sc;
      err_sq += e * e;
    }
    const double err = std::sqrt(err_sq / double(n));

    if (err <= 1.0) {
      t += h;
      y.swap(ynew);
      k1.swap(k7);
      fsal_ready = true;
    } else {
      fsal_ready = false;
    }
    const double factor = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
    h *= std::clamp(factor, 0.2, 5.0);
    // A step clipped to land on a target must not throttle later segments.
    if (err <= 1.0 && h < h_planned) h = h_planned;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Sparse generators: a fixed entry list plus driven entry lists with scalar
// time-dependent coefficients, applied blockwise so that one state vector can
// stack many columns (the columns of a propagator, or several density
// operators advancing under the same generator).
// ---------------------------------------------------------------------------

struct Entry {
  int r, c;
  cxd v;
};

// Superoperator entries of -i[h, ·] acting on a vectorized d x d operator.
inline std::vector<Entry> commutator_entries(int d, const std::vector<Entry>& h) {
  std::vector<Entry> out;
  out.reserve(2 * std::size_t(d) * h.size());
  for (const Entry& e : h) {
    for (int c = 0; c < d; ++c) out.push_back({c * d + e.r, c * d + e.c, -iu * e.v});
    for (int r = 0; r < d; ++r) out.push_back({e.c * d + r, e.r * d + r, iu * e.v});
  }
  return out;
}

// Superoperator entries of the dissipator C·C† - (1/2){C†C, ·} for a sparse
// jump operator C (rates folded into the entry values).
inline std::vector<Entry> jump_entries(int d, const std::vector<Entry>& c) {
  std::vector<Entry> out;
  for (const Entry& e1 : c)
    for (const Entry& e2 : c)
      out.push_back({e2.r * d + e1.r, e2.c * d + e1.c, e1.v * std::conj(e2.v)});
  // C†C is Hermitian; accumulate its sparse entries first.
  std::vector<Entry> cc;
  for (const Entry& e1 : c)
    for (const Entry& e2 : c)
      if (e1.r == e2.r) cc.push_back({e1.c, e2.c, std::conj(e1.v) * e2.v});
  for (const Entry& m : cc) {
    for (int k = 0; k < d; ++k) out.push_back({k * d + m.r, k * d + m.c, -m.v / 2.0});
    for (int k = 0; k < d; ++k) out.push_back({m.c * d + k, m.r * d + k, -m.v / 2.0});
  }
  return out;
}

// Dissipator entries for the single jump sqrt(rate)|to⟩⟨from|.
inline std::vector<Entry> jump_entries(int d, int to, int from, double rate) {
  return jump_entries(d, {{to, from, std::sqrt(rate)}});
}

inline std::vector<Entry> scaled_entries(const std::vector<Entry>& a, cxd s) {
  std::vector<Entry> out = a;
  for (Entry& e : out) e.v *= s;
  return out;
}

class SparseGenerator {
 public:
  explicit SparseGenerator(int block) : block_(block) {
    if (block <= 0) throw DimensionMismatch("block size must be positive");
  }

  int block() const { return block_; }

  void add_static(const std::vector<Entry>& es) {
    for (const Entry& e : es) check(e);
    static_.insert(static_.end(), es.begin(), es.end());
  }

  void add_driven(std::vector<Entry> es, std::function<cxd(double)> coeff) {
    for (const Entry& e : es) check(e);
    driven_.push_back({std::move(es), std::move(coeff)});
  }

  void rhs(double t, const Vec& y, Vec& dydt) const {
    if (y.size() % block_ != 0) throw DimensionMismatch("state is not a stack of blocks");
    const Eigen::Index m = y.size() / block_;
    dydt.setZero(y.size());
    apply_entries(static_, cxd{1.0}, y, dydt, m);
    for (const auto& term : driven_) {
      const cxd g = term.coeff(t);
      if (g != cxd{}) apply_entries(term.entries, g, y, dydt, m);
    }
  }

  // Convenience wrapper around the adaptive integrator.
  Vec propagate(Vec y, double t0, double t1, double rtol = 1e-9, double atol = 1e-12,
                const std::vector<double>& breakpoints = {}) const {
    return integrate_adaptive(
        [this](double t, const Vec& yy, Vec& dy) { rhs(t, yy, dy); }, std::move(y), t0, t1,
        rtol, atol, breakpoints);
  }

 private:
  struct Term {
    std::vector<Entry> entries;
    std::function<cxd(double)> coeff;
  };

  void check(const Entry& e) const {
    if (e.r < 0 || e.r >= block_ || e.c < 0 || e.c >= block_)
      throw OutOfRange("sparse entry outside block");
  }

  void apply_entries(const std::vector<Entry>& es, cxd g, const Vec& y, Vec& dydt,
                     Eigen::Index m) const {
    const cxd* src = y.data();
    cxd* dst = dydt.data();
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Index off = j * block_;
      for (const Entry& e : es) dst[off + e.r] += g * e.v * src[off + e.c];
    }
  }

  int block_;
  std::vector<Entry> static_;
  std::vector<Term> driven_;
};

// ---------------------------------------------------------------------------
// Dense Lindblad evolution
// ---------------------------------------------------------------------------

inline Mat evolve(const Mat& rho0, const std::function<Mat(double)>& hamiltonian,
                  const std::vector<Mat>& collapse, std::pair<double, double> t_span,
                  double tol = 1e-9) {
  const Eigen::Index d = rho0.rows();
  if (rho0.cols() != d) throw DimensionMismatch("state must be square");
  std::vector<Mat> cdag_c;
  cdag_c.reserve(collapse.size());
  for (const Mat& c : collapse) {
    if (c.rows() != d || c.cols() != d)
      throw DimensionMismatch("collapse operator does not match the state");
    cdag_c.push_back(c.adjoint() * c);
  }

  auto rhs = [&](double t, const Vec& y, Vec& dy) {
    const Eigen::Map<const Mat> rho(y.data(), d, d);
    const Mat h = hamiltonian(t);
    Mat out = -iu * (h * rho - rho * h);
    for (std::size_t k = 0; k < collapse.size(); ++k) {
      out.noalias() += collapse[k] * rho * collapse[k].adjoint();
      out.noalias() -= 0.5 * (cdag_c[k] * rho + rho * cdag_c[k]);
    }
    dy = Eigen::Map<const Vec>(out.data(), d * d);
  };

  const Vec y1 = integrate_adaptive(rhs, vec_density(rho0), t_span.first, t_span.second, tol,
                                    tol * 1e-3);
  return unvec_density(y1, int(d));
}

inline Mat evolve(const Mat& rho0, const Mat& hamiltonian, const std::vector<Mat>& collapse,
                  std::pair<double, double> t_span, double tol = 1e-9) {
  return evolve(
      rho0, std::function<Mat(double)>([&](double) { return hamiltonian; }), collapse, t_span,
      tol);
}

// ---------------------------------------------------------------------------
// Motional averages
// ---------------------------------------------------------------------------

// Rabi-rate reduction factor for Fock state n at Lamb-Dicke parameter eta:
// exp(-eta^2/2) L_n(eta^2).
inline double debye_waller_factor(int n, double eta) {
  if (n < 0) throw OutOfRange("Fock index must be non-negative");
  const double x = eta * eta;
  double lm1 = 0.0, l = 1.0;
  for (int k = 1; k <= n; ++k) {
    const double next = ((2.0 * k - 1.0 - x) * l - (k - 1.0) * lm1) / double(k);
    lm1 = l;
    l = next;
  }
  return std::exp(-x / 2.0) * l;
}

inline double thermal_weight(int n, double nbar) {
  if (n < 0) throw OutOfRange("Fock index must be non-negative");
  if (nbar <= 0.0) return n == 0 ? 1.0 : 0.0;
  return std::pow(nbar / (1.0 + nbar), double(n)) / (1.0 + nbar);
}

// Thermal expectation of f(n) over the Bose-Einstein occupation at nbar; the
// ladder is truncated once the remaining tail weight drops below tail_tol.
inline double thermal_average(const std::function<double(int)>& f, double nbar,
                              double tail_tol = 1e-9) {
  double acc = 0.0, cum = 0.0;
  for (int n = 0; n < 512; ++n) {
    const double w = thermal_weight(n, nbar);
    acc += w * f(n);
    cum += w;
    if (1.0 - cum < tail_tol) return acc;
  }
  throw IntegrationFailure("thermal ladder did not converge; nbar too large");
}

struct MonteCarloStats {
  double mean = 0.0;
  double sem = 0.0;
  int n = 0;
};

// Mean and standard error of f over n_samples independently seeded draws.
inline MonteCarloStats monte_carlo_average(const std::function<double(std::uint64_t)>& f,
                                           int n_samples, std::uint64_t seed,
                                           const std::string& tag = "mc") {
  if (n_samples < 1) throw OutOfRange("need at least one sample");
  std::vector<double> vals(static_cast<std::size_t>(n_samples), 0.0);
  for (int i = 0; i < n_samples; ++i) vals[std::size_t(i)] = f(derive_seed(seed, tag, i));
  MonteCarloStats s;
  s.n = n_samples;
  for (double v : vals) s.mean += v;
  s.mean /= double(n_samples);
  if (n_samples > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - s.mean) * (v - s.mean);
    s.sem = std::sqrt(ss / double(n_samples - 1) / double(n_samples));
  }
  return s;
}

}  // namespace gatekit

#endif
