// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_QOPS_HPP
#define GATEKIT_QOPS_HPP

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "gatekit/common.hpp"

namespace gatekit {

using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

// Levels of one atom: the two nuclear-spin qubit states, the optical clock
// state used for shelving, the Rydberg state, and a catch-all level for
// population that has left the computational manifold for good (decay into
// other states, atom loss).
namespace lvl {
inline constexpr int q0 = 0;
inline constexpr int q1 = 1;
inline constexpr int clk = 2;
inline constexpr int ryd = 3;
inline constexpr int dark = 4;
inline constexpr int atom_dim = 5;
inline constexpr int pair_dim = atom_dim * atom_dim;
}  // namespace lvl

// Pair-space index of |a⟩⊗|b⟩; atom 1 is the left factor.
constexpr int pair_index(int a, int b) { return a * lvl::atom_dim + b; }

// Computational basis {|00⟩,|01⟩,|10⟩,|11⟩} embedded in pair space.
inline const std::array<int, 4> qubit_pair_basis = {
    pair_index(lvl::q0, lvl::q0), pair_index(lvl::q0, lvl::q1),
    pair_index(lvl::q1, lvl::q0), pair_index(lvl::q1, lvl::q1)};

inline Mat tensor(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Column-major vectorization, so vec(A rho B) = (B^T ⊗ A) vec(rho).
inline Vec vec_density(const Mat& rho) {
  return Eigen::Map<const Vec>(rho.data(), rho.size());
}

inline Mat unvec_density(const Vec& v, int dim) {
  if (v.size() != Eigen::Index(dim) * dim)
    throw DimensionMismatch("vectorized state has wrong length");
  return Eigen::Map<const Mat>(v.data(), dim, dim);
}

inline Vec basis_ket(int dim, int i) {
  if (i < 0 || i >= dim) throw OutOfRange("basis index");
  Vec v = Vec::Zero(dim);
  v(i) = 1.0;
  return v;
}

// ---------------------------------------------------------------------------
// Quantum channel in superoperator form
// ---------------------------------------------------------------------------

class Channel {
 public:
  Channel() = default;

  explicit Channel(Mat superop) : s_(std::move(superop)) {
    const Eigen::Index n = s_.rows();
    dim_ = static_cast<int>(std::llround(std::sqrt(double(n))));
    if (s_.cols() != n || Eigen::Index(dim_) * dim_ != n)
      throw DimensionMismatch("superoperator must be d^2 x d^2");
  }

  static Channel identity(int dim) {
    return Channel(Mat::Identity(Eigen::Index(dim) * dim, Eigen::Index(dim) * dim));
  }

  static Channel from_unitary(const Mat& u) {
    if (u.rows() != u.cols()) throw DimensionMismatch("unitary must be square");
    return Channel(tensor(u.conjugate(), u));
  }

  static Channel from_kraus(const std::vector<Mat>& ks) {
    if (ks.empty()) throw DimensionMismatch("empty Kraus list");
    const Eigen::Index d = ks.front().rows();
    Mat s = Mat::Zero(d * d, d * d);
    for (const Mat& k : ks) {
      if (k.rows() != d || k.cols() != d)
        throw DimensionMismatch("Kraus operators must share one square shape");
      // Accumulate conj(K) ⊗ K block by block, skipping zero entries, so
      // sparse operators (jump projectors, single-row sinks) stay cheap.
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
          const cxd a = std::conj(k(i, j));
          if (a == cxd{}) continue;
          s.block(i * d, j * d, d, d) += a * k;
        }
    }
    return Channel(std::move(s));
  }

  int dim() const { return dim_; }
  const Mat& superop() const { return s_; }

  Mat apply(const Mat& rho) const {
    if (rho.rows() != dim_ || rho.cols() != dim_)
      throw DimensionMismatch("state does not match channel dimension");
    return unvec_density(s_ * vec_density(rho), dim_);
  }

  // Composition in time order: this map acts first, `next` acts second.
  Channel then(const Channel& next) const {
    if (next.dim_ != dim_) throw DimensionMismatch("composed channel dimensions differ");
    return Channel(next.s_ * s_);
  }

  Channel tensor_with(const Channel& o) const {
    const int da = dim_, db = o.dim_, d = da * db;
    Mat out(Eigen::Index(d) * d, Eigen::Index(d) * d);
    for (int a1 = 0; a1 < da; ++a1)
      for (int a2 = 0; a2 < da; ++a2)
        for (int c1 = 0; c1 < da; ++c1)
          for (int c2 = 0; c2 < da; ++c2) {
            const cxd sa = s_(a2 * da + a1, c2 * da + c1);
            for (int b1 = 0; b1 < db; ++b1)
              for (int b2 = 0; b2 < db; ++b2)
                for (int d1 = 0; d1 < db; ++d1)
                  for (int d2 = 0; d2 < db; ++d2) {
                    const Eigen::Index row =
                        Eigen::Index(a2 * db + b2) * d + (a1 * db + b1);
                    const Eigen::Index col =
                        Eigen::Index(c2 * db + d2) * d + (c1 * db + d1);
                    out(row, col) = sa * o.s_(b2 * db + b1, d2 * db + d1);
                  }
          }
    return Channel(std::move(out));
  }

  // Choi matrix with composite index (output, input).
  Mat choi() const {
    const int d = dim_;
    Mat c(Eigen::Index(d) * d, Eigen::Index(d) * d);
    for (int a = 0; a < d; ++a)
      for (int i = 0; i < d; ++i)
        for (int b = 0; b < d; ++b)
          for (int j = 0; j < d; ++j)
            c(Eigen::Index(a) * d + i, Eigen::Index(b) * d + j) =
                s_(Eigen::Index(b) * d + a, Eigen::Index(j) * d + i);
    return c;
  }

  bool is_trace_preserving(double tol = 1e-9) const {
    const int d = dim_;
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) {
        cxd tr = 0.0;
        for (int k = 0; k < d; ++k) tr += s_(Eigen::Index(k) * d + k, Eigen::Index(c) * d + r);
        if (std::abs(tr - (r == c ? 1.0 : 0.0)) > tol) return false;
      }
    return true;
  }

  bool is_completely_positive(double tol = 1e-9) const {
    const Mat c = choi();
    if ((c - c.adjoint()).cwiseAbs().maxCoeff() > tol) return false;
    Eigen::SelfAdjointEigenSolver<Mat> es((c + c.adjoint()) / 2.0);
    return es.eigenvalues().minCoeff() > -tol;
  }

 private:
  Mat s_;
  int dim_ = 0;
};

inline Mat apply_channel(const Channel& e, const Mat& rho) { return e.apply(rho); }

// ---------------------------------------------------------------------------
// Standard operators
// ---------------------------------------------------------------------------

inline Mat pauli_x() {
  Mat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

inline Mat pauli_y() {
  Mat m(2, 2);
  m << 0, -iu, iu, 0;
  return m;
}

inline Mat pauli_z() {
  Mat m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

inline Mat rot_x(double th) {
  Mat m(2, 2);
  m << std::cos(th / 2), -iu * std::sin(th / 2), -iu * std::sin(th / 2), std::cos(th / 2);
  return m;
}

inline Mat rot_y(double th) {
  Mat m(2, 2);
  m << std::cos(th / 2), -std::sin(th / 2), std::sin(th / 2), std::cos(th / 2);
  return m;
}

inline Mat rot_z(double th) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = std::exp(-iu * (th / 2));
  m(1, 1) = std::exp(iu * (th / 2));
  return m;
}

inline Mat hadamard() {
  Mat m(2, 2);
  m << 1, 1, 1, -1;
  return m / std::sqrt(2.0);
}

inline Mat ideal_cz() {
  Mat m = Mat::Identity(4, 4);
  m(3, 3) = -1.0;
  return m;
}

inline Mat ideal_cz_pair() {
  Mat m = Mat::Identity(lvl::pair_dim, lvl::pair_dim);
  m(pair_index(lvl::q1, lvl::q1), pair_index(lvl::q1, lvl::q1)) = -1.0;
  return m;
}

// Phase content of a controlled-phase gate: the two single-qubit phases and
// the entangling phase.  The |11⟩ phase is always their sum.
struct CzPhases {
  double phi01 = 0.0;
  double phi10 = 0.0;
  double phi_ent = pi;
  double phi11() const { return phi01 + phi10 + phi_ent; }
};

// diag(1, e^{iφ01}, e^{iφ10}, e^{i(φ01+φ10+φ_ent)}) on (00, 01, 10, 11).
inline Mat ideal_cz(const CzPhases& ph) {
  Mat m = Mat::Identity(4, 4);
  m(1, 1) = std::exp(iu * ph.phi01);
  m(2, 2) = std::exp(iu * ph.phi10);
  m(3, 3) = std::exp(iu * ph.phi11());
  return m;
}

inline Mat ideal_cz_pair(const CzPhases& ph) {
  Mat m = Mat::Identity(lvl::pair_dim, lvl::pair_dim);
  m(qubit_pair_basis[1], qubit_pair_basis[1]) = std::exp(iu * ph.phi01);
  m(qubit_pair_basis[2], qubit_pair_basis[2]) = std::exp(iu * ph.phi10);
  m(qubit_pair_basis[3], qubit_pair_basis[3]) = std::exp(iu * ph.phi11());
  return m;
}

// Lift a 2x2 qubit operator to the 5-level atom, identity on the rest.
inline Mat embed_qubit_op(const Mat& u2) {
  if (u2.rows() != 2 || u2.cols() != 2) throw DimensionMismatch("expected a 2x2 operator");
  Mat m = Mat::Identity(lvl::atom_dim, lvl::atom_dim);
  m.block(0, 0, 2, 2) = u2;
  return m;
}

// Lift a single-atom operator to pair space on atom 1 or atom 2.
inline Mat op_on_atom(const Mat& u, int which) {
  if (u.rows() != lvl::atom_dim || u.cols() != lvl::atom_dim)
    throw DimensionMismatch("expected a single-atom operator");
  const Mat id = Mat::Identity(lvl::atom_dim, lvl::atom_dim);
  if (which == 0) return tensor(u, id);
  if (which == 1) return tensor(id, u);
  throw OutOfRange("atom index must be 0 or 1");
}

// Phase applied to |q1⟩ of one atom; the free Z rotation tracked in software.
inline Mat virtual_z_atom(double theta) {
  Mat m = Mat::Identity(lvl::atom_dim, lvl::atom_dim);
  m(lvl::q1, lvl::q1) = std::exp(iu * theta);
  return m;
}

inline Mat partial_trace(const Mat& rho, int da, int db, int keep) {
  if (rho.rows() != Eigen::Index(da) * db || rho.cols() != rho.rows())
    throw DimensionMismatch("state does not factor into the given dimensions");
  if (keep == 0) {
    Mat r = Mat::Zero(da, da);
    for (int a = 0; a < da; ++a)
      for (int ap = 0; ap < da; ++ap)
        for (int b = 0; b < db; ++b) r(a, ap) += rho(a * db + b, ap * db + b);
    return r;
  }
  if (keep == 1) {
    Mat r = Mat::Zero(db, db);
    for (int b = 0; b < db; ++b)
      for (int bp = 0; bp < db; ++bp)
        for (int a = 0; a < da; ++a) r(b, bp) += rho(a * db + b, a * db + bp);
    return r;
  }
  throw OutOfRange("keep must be 0 or 1");
}

// ---------------------------------------------------------------------------
// Gate fidelity
//
// Process fidelity from the channel's action on all d^2 computational basis
// operators, with the output sandwiched back into the computational subspace
// so that leaked population counts as error.  For two-qubit targets the two
// per-atom virtual Z phases can be optimized; they are free parameters of the
// physical gate.
// ---------------------------------------------------------------------------

struct FidelityResult {
  double f_avg = 0.0;
  double f_pro = 0.0;
  std::array<double, 2> virtual_z = {0.0, 0.0};
};

// Process tensor restricted to the computational subspace: element
// (a + 4i, b + 4j) is ⟨a| E(|i⟩⟨j|) |b⟩ with all four indices drawn from the
// two-qubit computational basis.
using QubitProcessTensor = Eigen::Matrix<cxd, 16, 16>;

inline std::vector<int> qubit_basis_in(int dim) {
  switch (dim) {
    case 2:
      return {0, 1};
    case 4:
      return {0, 1, 2, 3};
    case lvl::atom_dim:
      return {lvl::q0, lvl::q1};
    case lvl::pair_dim:
      return {qubit_pair_basis[0], qubit_pair_basis[1], qubit_pair_basis[2],
              qubit_pair_basis[3]};
    default:
      throw DimensionMismatch("no computational subspace known for this dimension");
  }
}

inline QubitProcessTensor qubit_process_tensor(const Channel& e) {
  const std::vector<int> q = qubit_basis_in(e.dim());
  if (q.size() != 4) throw DimensionMismatch("expected a two-qubit channel");
  const int d = e.dim();
  const Mat& s = e.superop();
  QubitProcessTensor t;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          t(a + 4 * i, b + 4 * j) =
              s(Eigen::Index(q[b]) * d + q[a], Eigen::Index(q[j]) * d + q[i]);
  return t;
}

namespace detail {

inline double wrap_angle(double t) {
  t = std::remainder(t, two_pi);
  return t;
}

// Maximize tr + 2 Re[e^{-i ta} ga + e^{-i tb} gb + e^{-i(ta+tb)} gab
//                    + e^{i(tb-ta)} gx] by exact coordinate updates.
struct PhasePair {
  double ta, tb, value;
};

inline PhasePair maximize_phase_quadratic(double tr, cxd ga, cxd gb, cxd gab, cxd gx) {
  auto value = [&](double ta, double tb) {
    return tr + 2.0 * (std::exp(-iu * ta) * ga + std::exp(-iu * tb) * gb +
                       std::exp(-iu * (ta + tb)) * gab + std::exp(iu * (tb - ta)) * gx)
                          .real();
  };
  auto ascend = [&](double ta, double tb) {
    for (int it = 0; it < 500; ++it) {
      const double na = std::arg(ga + std::exp(-iu * tb) * gab + std::exp(iu * tb) * gx);
      const double nb = std::arg(gb + std::exp(-iu * na) * gab + std::exp(iu * na) * std::conj(gx));
      const double step = std::abs(na - ta) + std::abs(nb - tb);
      ta = na;
      tb = nb;
      if (step < 1e-13) break;
    }
    return PhasePair{ta, tb, value(ta, tb)};
  };
  const double a0 = std::arg(ga == cxd{} ? cxd{1.0} : ga);
  const double b0 = std::arg(gb == cxd{} ? cxd{1.0} : gb);
  PhasePair best{0.0, 0.0, value(0.0, 0.0)};
  for (double da : {0.0, pi})
    for (double db : {0.0, pi}) {
      const PhasePair p = ascend(a0 + da, b0 + db);
      if (p.value > best.value) best = p;
    }
  best.ta = wrap_angle(best.ta);
  best.tb = wrap_angle(best.tb);
  return best;
}

}  // namespace detail

inline FidelityResult avg_gate_fidelity(const QubitProcessTensor& t, const Mat& target,
                                        bool optimize_sq_phases = true) {
  if (target.rows() != 4 || target.cols() != 4)
    throw DimensionMismatch("expected a 4x4 target");
  // G_ab = sum_ij conj(V_ai) V_bj ⟨a|E(|i⟩⟨j|)|b⟩; f_pro(z) = z† G z / 16 with
  // z the per-basis-state virtual phase factors.
  Eigen::Matrix4cd g = Eigen::Matrix4cd::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      cxd acc = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          acc += std::conj(target(a, i)) * target(b, j) * t(a + 4 * i, b + 4 * j);
      g(a, b) = acc;
    }
  const double tr = g.diagonal().real().sum();
  FidelityResult r;
  if (!optimize_sq_phases) {
    r.f_pro = (g.sum()).real() / 16.0;
  } else {
    // Basis order |00⟩,|01⟩,|10⟩,|11⟩: atom-1 phase multiplies states 2 and 3,
    // atom-2 phase multiplies states 1 and 3.
    const cxd ga = g(0, 2) + g(1, 3);
    const cxd gb = g(0, 1) + g(2, 3);
    const cxd gab = g(0, 3);
    const cxd gx = g(1, 2);
    const auto best = detail::maximize_phase_quadratic(tr, ga, gb, gab, gx);
    r.f_pro = best.value / 16.0;
    r.virtual_z = {best.ta, best.tb};
  }
  r.f_avg = (4.0 * r.f_pro + 1.0) / 5.0;
  return r;
}

inline double avg_gate_fidelity_at(const QubitProcessTensor& t, const Mat& target,
                                   double theta_a, double theta_b) {
  if (target.rows() != 4 || target.cols() != 4)
    throw DimensionMismatch("expected a 4x4 target");
  const std::array<cxd, 4> z = {cxd{1.0}, std::exp(iu * theta_b), std::exp(iu * theta_a),
                                std::exp(iu * (theta_a + theta_b))};
  cxd acc = 0.0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      cxd gab = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          gab += std::conj(target(a, i)) * target(b, j) * t(a + 4 * i, b + 4 * j);
      acc += z[a] * std::conj(z[b]) * gab;
    }
  const double f_pro = acc.real() / 16.0;
  return (4.0 * f_pro + 1.0) / 5.0;
}

inline FidelityResult avg_gate_fidelity(const Channel& sim, const Mat& target,
                                        bool optimize_sq_phases = true) {
  const std::vector<int> q = qubit_basis_in(sim.dim());
  const int dq = int(q.size());
  if (target.rows() != dq || target.cols() != dq)
    throw DimensionMismatch("target does not match the channel's computational subspace");
  if (dq == 4) return avg_gate_fidelity(qubit_process_tensor(sim), target, optimize_sq_phases);

  const int d = sim.dim();
  const Mat& s = sim.superop();
  Eigen::Matrix2cd g = Eigen::Matrix2cd::Zero();
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      cxd acc = 0.0;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          acc += std::conj(target(a, i)) * target(b, j) *
                 s(Eigen::Index(q[b]) * d + q[a], Eigen::Index(q[j]) * d + q[i]);
      g(a, b) = acc;
    }
  FidelityResult r;
  const double tr = g.diagonal().real().sum();
  if (!optimize_sq_phases) {
    r.f_pro = g.sum().real() / 4.0;
  } else {
    r.virtual_z = {detail::wrap_angle(std::arg(g(0, 1) == cxd{} ? cxd{1.0} : g(0, 1))), 0.0};
    r.f_pro = (tr + 2.0 * std::abs(g(0, 1))) / 4.0;
  }
  r.f_avg = (2.0 * r.f_pro + 1.0) / 3.0;
  return r;
}

// Fraction of population that has left the computational subspace, averaged
// over computational basis inputs.
inline double leakage_loss(const Channel& e) {
  const std::vector<int> q = qubit_basis_in(e.dim());
  const int d = e.dim();
  const Mat& s = e.superop();
  double kept = 0.0;
  for (int i : q) {
    const Eigen::Index col = Eigen::Index(i) * d + i;
    for (int k : q) kept += s(Eigen::Index(k) * d + k, col).real();
  }
  return 1.0 - kept / double(q.size());
}

}  // namespace gatekit

#endif
