// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_FITS_HPP
#define GATEKIT_FITS_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gatekit/common.hpp"

namespace gatekit {

using RealVec = Eigen::VectorXd;
using RealMat = Eigen::MatrixXd;

struct CurveFit {
  RealVec params;
  RealMat covariance;  // (J^T J)^-1 of the sigma-weighted Jacobian
  double chi2 = 0.0;
  int dof = 0;
};

// Weighted nonlinear least squares with analytic Jacobian, Levenberg-Marquardt
// damping on the normal equations.
inline CurveFit fit_curve(const std::vector<double>& x, const std::vector<double>& y,
                          const std::vector<double>& sigma,
                          const std::function<double(double, const RealVec&)>& model,
                          const std::function<RealVec(double, const RealVec&)>& jacobian,
                          RealVec p0, int max_iter = 200) {
  const std::size_t n = x.size();
  if (y.size() != n || sigma.size() != n || n == 0)
    throw DimensionMismatch("fit needs matching, non-empty x, y, and sigma");
  const int np = int(p0.size());
  if (int(n) < np) throw DimensionMismatch("fewer points than parameters");

  auto chi2_of = [&](const RealVec& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (y[i] - model(x[i], p)) / sigma[i];
      c += r * r;
    }
    return c;
  };

  RealVec p = std::move(p0);
  double chi2 = chi2_of(p);
  if (!std::isfinite(chi2)) throw FitDiverged("initial guess evaluates to non-finite chi2");

  double lambda = 1e-3;
  RealMat jtj(np, np);
  RealVec jtr(np);
  for (int it = 0; it < max_iter; ++it) {
    jtj.setZero();
    jtr.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      const RealVec ji = jacobian(x[i], p) / sigma[i];
      const double ri = (y[i] - model(x[i], p)) / sigma[i];
      jtj.noalias() += ji * ji.transpose();
      jtr.noalias() += ji * ri;
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      RealMat damped = jtj;
      for (int k = 0; k < np; ++k)
        damped(k, k) += lambda * std::max(jtj(k, k), 1e-30);
      const RealVec step = damped.ldlt().solve(jtr);
      const RealVec cand = p + step;
      const double c2 = chi2_of(cand);
      if (std::isfinite(c2) && c2 <= chi2) {
        const double drop = chi2 - c2;
        p = cand;
        chi2 = c2;
        lambda = std::max(lambda / 3.0, 1e-14);
        accepted = true;
        if (drop < 1e-12 * (1.0 + chi2) && step.cwiseAbs().maxCoeff() < 1e-10) it = max_iter;
        break;
      }
      lambda *= 5.0;
      if (lambda > 1e14) throw FitDiverged("damping exploded without reducing chi2");
    }
    if (!accepted) throw FitDiverged("no acceptable step found");
  }

  CurveFit out;
  out.params = p;
  out.chi2 = chi2;
  out.dof = int(n) - np;
  jtj.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const RealVec ji = jacobian(x[i], p) / sigma[i];
    jtj.noalias() += ji * ji.transpose();
  }
  out.covariance = jtj.inverse();
  return out;
}

// Weighted quadratic polynomial c0 + c1 x + c2 x^2 by direct normal equations.
struct QuadraticFit {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double chi2 = 0.0;
  int dof = 0;
  double vertex() const {
    if (c2 == 0.0) throw FitDiverged("flat quadratic has no vertex");
    return -c1 / (2.0 * c2);
  }
};

inline QuadraticFit fit_quadratic(const std::vector<double>& x, const std::vector<double>& y,
                                  const std::vector<double>& sigma) {
  const std::size_t n = x.size();
  if (y.size() != n || sigma.size() != n || n < 3)
    throw DimensionMismatch("quadratic fit needs at least three weighted points");
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 1.0 / (sigma[i] * sigma[i]);
    const Eigen::Vector3d v(1.0, x[i], x[i] * x[i]);
    a.noalias() += w * v * v.transpose();
    b.noalias() += w * y[i] * v;
  }
  const Eigen::Vector3d c = a.ldlt().solve(b);
  QuadraticFit out{c(0), c(1), c(2), 0.0, int(n) - 3};
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (y[i] - (c(0) + c(1) * x[i] + c(2) * x[i] * x[i])) / sigma[i];
    out.chi2 += r * r;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derivative-free minimization
// ---------------------------------------------------------------------------

struct SimplexResult {
  RealVec x;
  double value = 0.0;
  int evaluations = 0;
};

inline SimplexResult nelder_mead(const std::function<double(const RealVec&)>& f, RealVec x0,
                                 const RealVec& step, double ftol = 1e-12, int max_eval = 4000) {
  const int np = int(x0.size());
  if (step.size() != np) throw DimensionMismatch("step vector must match the start point");

  std::vector<RealVec> xs;
  std::vector<double> fs;
  int evals = 0;
  auto eval = [&](const RealVec& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };

  xs.push_back(x0);
  fs.push_back(eval(x0));
  for (int k = 0; k < np; ++k) {
    RealVec x = x0;
    x(k) += step(k);
    xs.push_back(x);
    fs.push_back(eval(x));
  }

  auto order = [&] {
    std::vector<int> idx(xs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<RealVec> x2;
    std::vector<double> f2;
    for (int i : idx) {
      x2.push_back(xs[i]);
      f2.push_back(fs[i]);
    }
    xs.swap(x2);
    fs.swap(f2);
  };

  order();
  while (evals < max_eval) {
    if (std::abs(fs.back() - fs.front()) <= ftol * (1.0 + std::abs(fs.front()))) break;

    RealVec centroid = RealVec::Zero(np);
    for (int i = 0; i < np; ++i) centroid += xs[i];
    centroid /= double(np);

    const RealVec xr = centroid + (centroid - xs.back());
    const double fr = eval(xr);
    if (fr < fs.front()) {
      const RealVec xe = centroid + 2.0 * (centroid - xs.back());
      const double fe = eval(xe);
      xs.back() = fe < fr ? xe : xr;
      fs.back() = std::min(fe, fr);
    } else if (fr < fs[std::size_t(np) - 1]) {
      xs.back() = xr;
      fs.back() = fr;
    } else {
      const RealVec xc = centroid + 0.5 * (xs.back() - centroid);
      const double fc = eval(xc);
      if (fc < fs.back()) {
        xs.back() = xc;
        fs.back() = fc;
      } else {
        for (std::size_t i = 1; i < xs.size(); ++i) {
          xs[i] = xs.front() + 0.5 * (xs[i] - xs.front());
          fs[i] = eval(xs[i]);
        }
      }
    }
    order();
  }
  return {xs.front(), fs.front(), evals};
}

// Golden-section maximization on [a, b] for a unimodal objective.
inline double golden_max(const std::function<double(double)>& f, double a, double b,
                         double xtol = 1e-10) {
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > xtol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace gatekit

#endif
