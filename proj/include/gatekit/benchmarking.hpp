// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_BENCHMARKING_HPP
#define GATEKIT_BENCHMARKING_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "gatekit/gates.hpp"

namespace gatekit {

// ---------------------------------------------------------------------------
// Hardware Euler form of a qubit rotation: virtual Z frames around two fixed
// pi/2 drive pulses, u = Z(phi0) X90 Z(phi1) X90 Z(phi2) with the rightmost
// factor executed first.

struct ZxzxzAngles {
  double phi0 = 0.0;
  double phi1 = 0.0;
  double phi2 = 0.0;
};

inline Mat zxzxz_unitary(const ZxzxzAngles& e) {
  return rot_z(e.phi0) * rot_x(pi / 2.0) * rot_z(e.phi1) * rot_x(pi / 2.0) *
         rot_z(e.phi2);
}

// Euler angles of an arbitrary qubit rotation in the form above, exact up to
// global phase.  Built on Rz(a) Ry(t) Rz(b) = Z(a) X90 Z(pi - t) X90 Z(b - pi).
inline ZxzxzAngles zxzxz_angles(const Mat& u) {
  if (u.rows() != 2 || u.cols() != 2)
    throw DimensionMismatch("expected a 2x2 rotation");
  const cxd det = u(0, 0) * u(1, 1) - u(0, 1) * u(1, 0);
  const Mat su = u / std::sqrt(det);
  const double theta =
      2.0 * std::atan2(std::abs(su(1, 0)), std::abs(su(0, 0)));
  double alpha = 0.0;
  double beta = 0.0;
  if (std::abs(su(1, 0)) < 1e-12) {
    alpha = 2.0 * std::arg(su(1, 1));
  } else if (std::abs(su(0, 0)) < 1e-12) {
    alpha = 2.0 * std::arg(su(1, 0));
  } else {
    alpha = std::arg(su(1, 0)) - std::arg(su(0, 0));
    beta = -std::arg(su(1, 0)) - std::arg(su(0, 0));
  }
  return {detail::wrap_angle(alpha), detail::wrap_angle(pi - theta),
          detail::wrap_angle(beta - pi)};
}

// Haar-uniform qubit rotation: a normalized four-component Gaussian
// quaternion mapped to SU(2), returned in hardware Euler form.
inline ZxzxzAngles haar_random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::array<double, 4> q{};
  for (double& c : q) c = gaussian_sample(rng);
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (n < 1e-12) {
    q = {1.0, 0.0, 0.0, 0.0};
    n = 1.0;
  }
  Mat u(2, 2);
  u << cxd(q[0] / n, -q[3] / n), cxd(-q[2] / n, -q[1] / n),
      cxd(q[2] / n, -q[1] / n), cxd(q[0] / n, q[3] / n);
  return zxzxz_angles(u);
}

// ---------------------------------------------------------------------------
// Single-qubit Clifford group in minimal hardware form: each of the 24
// elements as the shortest Z(z0) [X90 Z(z1) [X90 Z(z2)]] sequence, with
// quarter-turn frame angles.

struct OneQubitClifford {
  std::vector<double> z;  // n_x90 + 1 frame angles
  int n_x90 = 0;
  Mat u;                  // 2x2 unitary, fixed phase convention
};

namespace detail {

// Images of X, Y, Z under conjugation, encoded as (axis, sign) pairs; a
// signed Pauli permutation determines a Clifford up to global phase.
using PauliFrame1 = std::array<std::int8_t, 6>;

inline bool pauli_frame(const Mat& u, PauliFrame1& f) {
  const std::array<Mat, 3> p{pauli_x(), pauli_y(), pauli_z()};
  for (int i = 0; i < 3; ++i) {
    const Mat c = u * p[i] * u.adjoint();
    bool found = false;
    for (int j = 0; j < 3; ++j) {
      const cxd t = (c * p[j]).trace() / 2.0;
      if (std::abs(t.imag()) > 1e-6) continue;
      if (std::abs(t.real() - 1.0) < 1e-6 || std::abs(t.real() + 1.0) < 1e-6) {
        f[2 * i] = std::int8_t(j);
        f[2 * i + 1] = std::int8_t(t.real() > 0.0 ? 1 : -1);
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

struct Clifford1Tables {
  std::vector<OneQubitClifford> elems;
  std::map<PauliFrame1, int> index;
  std::vector<int> inverse;
  std::array<int, 3> s1{};  // identity and the two 120-degree axis cycles
  int axis_swap = 0;        // one-pulse element exchanging the X and Z axes
};

inline const Clifford1Tables& clifford1_tables() {
  static const Clifford1Tables tables = [] {
    Clifford1Tables t;
    auto push = [&t](std::vector<double> z) {
      Mat u = rot_z(z[0]);
      for (std::size_t k = 1; k < z.size(); ++k)
        u = u * rot_x(pi / 2.0) * rot_z(z[k]);
      PauliFrame1 f{};
      if (!pauli_frame(u, f))
        throw std::logic_error("quarter-turn sequence is not a Clifford");
      if (t.index.count(f)) return;
      t.index.emplace(f, int(t.elems.size()));
      const int nx = int(z.size()) - 1;
      t.elems.push_back({std::move(z), nx, u});
    };
    // Enumerate by pulse count so every element keeps its shortest form.
    const double s = pi / 2.0;
    for (int a = 0; a < 4; ++a) push({wrap_angle(a * s)});
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) push({wrap_angle(a * s), wrap_angle(b * s)});
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c)
          push({wrap_angle(a * s), wrap_angle(b * s), wrap_angle(c * s)});
    if (t.elems.size() != 24)
      throw std::logic_error("single-qubit Clifford table is incomplete");
    auto index_of = [&t](const Mat& u) {
      PauliFrame1 f{};
      if (!pauli_frame(u, f)) throw std::logic_error("not a Clifford frame");
      auto it = t.index.find(f);
      if (it == t.index.end()) throw std::logic_error("frame not in table");
      return it->second;
    };
    t.inverse.resize(t.elems.size());
    for (std::size_t i = 0; i < t.elems.size(); ++i)
      t.inverse[i] = index_of(t.elems[i].u.adjoint());
    const Mat cycle =
        0.5 * (Mat::Identity(2, 2) - iu * (pauli_x() + pauli_y() + pauli_z()));
    t.s1 = {index_of(Mat::Identity(2, 2)), index_of(cycle),
            index_of(Mat(cycle * cycle))};
    t.axis_swap = index_of(hadamard());
    if (t.elems[t.s1[0]].n_x90 != 0 || t.elems[t.s1[1]].n_x90 != 1 ||
        t.elems[t.s1[2]].n_x90 != 1 || t.elems[t.axis_swap].n_x90 != 1)
      throw std::logic_error("special Clifford elements have unexpected cost");
    return t;
  }();
  return tables;
}

}  // namespace detail

inline const std::vector<OneQubitClifford>& clifford1_table() {
  return detail::clifford1_tables().elems;
}

inline int clifford1_find(const Mat& u) {
  detail::PauliFrame1 f{};
  if (!detail::pauli_frame(u, f)) return -1;
  const auto& idx = detail::clifford1_tables().index;
  auto it = idx.find(f);
  return it == idx.end() ? -1 : it->second;
}

inline int clifford1_inverse(int idx) {
  const auto& t = detail::clifford1_tables();
  if (idx < 0 || idx >= int(t.elems.size()))
    throw OutOfRange("Clifford index out of table");
  return t.inverse[idx];
}

// ---------------------------------------------------------------------------
// Two-qubit Clifford group, generated as the standard four coset classes over
// the single-qubit table: a leading local layer, then zero to three
// entangling gates with fixed one-pulse middle layers, and a trailing
// axis-cycle layer for the one- and two-gate classes.

struct TwoQubitClifford {
  int c1a = 0, c1b = 0;  // leading local layer, per atom
  int cls = 0;           // number of entangling gates, 0 to 3
  int s1a = 0, s1b = 0;  // trailing axis-cycle selectors for cls 1 and 2
  int n_x90 = 0;
  int n_cz = 0;
};

namespace detail {

using PauliFrame2 = std::array<std::int8_t, 30>;

inline const std::array<Mat, 16>& pauli_pair_products() {
  static const std::array<Mat, 16> products = [] {
    const std::array<Mat, 4> p{Mat::Identity(2, 2), pauli_x(), pauli_y(),
                               pauli_z()};
    std::array<Mat, 16> out;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) out[4 * a + b] = tensor(p[a], p[b]);
    return out;
  }();
  return products;
}

inline bool pauli_frame2(const Mat& u, PauliFrame2& f) {
  const auto& p = pauli_pair_products();
  const Mat ua = u.adjoint();
  for (int i = 1; i < 16; ++i) {
    const Mat c = u * p[i] * ua;
    bool found = false;
    for (int j = 1; j < 16; ++j) {
      const cxd t = c.cwiseProduct(p[j].transpose()).sum() / 4.0;
      if (std::abs(t.imag()) > 1e-6) continue;
      if (std::abs(t.real() - 1.0) < 1e-6 || std::abs(t.real() + 1.0) < 1e-6) {
        f[2 * (i - 1)] = std::int8_t(j);
        f[2 * (i - 1) + 1] = std::int8_t(t.real() > 0.0 ? 1 : -1);
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace detail

class TwoQubitCliffordGroup {
 public:
  TwoQubitCliffordGroup() {
    const auto& c1 = detail::clifford1_tables();
    const Mat cz = ideal_cz();
    const Mat& swap_axes = c1.elems[c1.axis_swap].u;
    const Mat mid = tensor(swap_axes, swap_axes);
    std::array<Mat, 3> s1u;
    std::array<int, 3> s1x{};
    for (int k = 0; k < 3; ++k) {
      s1u[k] = c1.elems[c1.s1[k]].u;
      s1x[k] = c1.elems[c1.s1[k]].n_x90;
    }
    elems_.reserve(11520);
    us_.reserve(11520);
    auto add = [this](const TwoQubitClifford& e, Mat u) {
      detail::PauliFrame2 f{};
      if (!detail::pauli_frame2(u, f))
        throw std::logic_error("class construction left the Clifford group");
      if (!index_.emplace(f, int(elems_.size())).second)
        throw std::logic_error("class construction produced a duplicate");
      elems_.push_back(e);
      us_.push_back(std::move(u));
    };
    for (int a = 0; a < 24; ++a) {
      for (int b = 0; b < 24; ++b) {
        const Mat base = tensor(c1.elems[a].u, c1.elems[b].u);
        const int nx = c1.elems[a].n_x90 + c1.elems[b].n_x90;
        add({a, b, 0, 0, 0, nx, 0}, base);
        const Mat one = cz * base;
        const Mat two = cz * mid * one;
        for (int sa = 0; sa < 3; ++sa)
          for (int sb = 0; sb < 3; ++sb) {
            const Mat tail = tensor(s1u[sa], s1u[sb]);
            add({a, b, 1, sa, sb, nx + s1x[sa] + s1x[sb], 1}, tail * one);
            add({a, b, 2, sa, sb, nx + 2 + s1x[sa] + s1x[sb], 2}, tail * two);
          }
        add({a, b, 3, 0, 0, nx + 4, 3}, cz * mid * two);
      }
    }
    if (elems_.size() != 11520)
      throw std::logic_error("two-qubit Clifford table is incomplete");
    inverse_.resize(elems_.size());
    long total_x90 = 0;
    long total_cz = 0;
    for (std::size_t i = 0; i < elems_.size(); ++i) {
      const int j = find(us_[i].adjoint());
      if (j < 0) throw std::logic_error("inverse missing from table");
      inverse_[i] = j;
      total_x90 += elems_[i].n_x90;
      total_cz += elems_[i].n_cz;
    }
    mean_x90_ = double(total_x90) / double(elems_.size());
    mean_cz_ = double(total_cz) / double(elems_.size());
  }

  std::size_t size() const { return elems_.size(); }
  const std::vector<TwoQubitClifford>& elements() const { return elems_; }
  const Mat& unitary(int idx) const { return us_.at(std::size_t(idx)); }
  int inverse(int idx) const { return inverse_.at(std::size_t(idx)); }
  double mean_x90() const { return mean_x90_; }
  double mean_cz() const { return mean_cz_; }

  // Index of a 4x4 unitary in the table, or -1 when it is not a Clifford.
  int find(const Mat& u) const {
    detail::PauliFrame2 f{};
    if (!detail::pauli_frame2(u, f)) return -1;
    auto it = index_.find(f);
    return it == index_.end() ? -1 : it->second;
  }

 private:
  std::vector<TwoQubitClifford> elems_;
  std::vector<Mat> us_;
  std::vector<int> inverse_;
  std::map<detail::PauliFrame2, int> index_;
  double mean_x90_ = 0.0;
  double mean_cz_ = 0.0;
};

inline const TwoQubitCliffordGroup& clifford2_group() {
  static const TwoQubitCliffordGroup group;
  return group;
}

struct GateCounts {
  double x90_per_clifford = 0.0;
  double cz_per_clifford = 0.0;
};

inline GateCounts clifford2_gate_counts() {
  const auto& g = clifford2_group();
  return {g.mean_x90(), g.mean_cz()};
}

// ---------------------------------------------------------------------------
// Circuits: flat gate sequences on one or two atoms, ending in a joint
// readout.

struct Circuit {
  std::string protocol;
  int n_atoms = 2;
  int depth = 0;
  int realization = 0;
  std::vector<GateOp> ops;
};

namespace detail {

inline void emit_virtual_z(std::vector<GateOp>& ops, double angle,
                           std::vector<int> atoms) {
  const double a = wrap_angle(angle);
  if (std::abs(a) < 1e-14) return;
  GateOp op;
  op.kind = GateOp::Kind::virtual_z;
  op.angle = a;
  op.targets = std::move(atoms);
  ops.push_back(std::move(op));
}

inline void emit_x90(std::vector<GateOp>& ops, std::vector<int> atoms) {
  GateOp op;
  op.kind = GateOp::Kind::xhalf;
  op.targets = std::move(atoms);
  ops.push_back(std::move(op));
}

inline void emit_zxzxz(std::vector<GateOp>& ops, const std::vector<double>& z,
                       const std::vector<int>& atoms) {
  for (std::size_t k = z.size(); k-- > 0;) {
    emit_virtual_z(ops, z[k], atoms);
    if (k > 0) emit_x90(ops, atoms);
  }
}

inline void emit_rotation(std::vector<GateOp>& ops, const ZxzxzAngles& e,
                          const std::vector<int>& atoms) {
  emit_zxzxz(ops, {e.phi0, e.phi1, e.phi2}, atoms);
}

inline void emit_clifford1(std::vector<GateOp>& ops, int idx, int atom) {
  emit_zxzxz(ops, clifford1_tables().elems[std::size_t(idx)].z, {atom});
}

inline void emit_cz(std::vector<GateOp>& ops) {
  GateOp op;
  op.kind = GateOp::Kind::full_cz;
  op.targets = {0, 1};
  ops.push_back(std::move(op));
}

inline void emit_clock_pi(std::vector<GateOp>& ops, bool shelve) {
  GateOp op;
  op.kind = GateOp::Kind::clock_pi;
  op.shelve = shelve;
  op.targets = {0, 1};
  ops.push_back(std::move(op));
}

inline void emit_measure(std::vector<GateOp>& ops) {
  GateOp op;
  op.kind = GateOp::Kind::measure_all;
  ops.push_back(std::move(op));
}

inline void emit_clifford2(std::vector<GateOp>& ops,
                           const TwoQubitClifford& e) {
  const auto& t = clifford1_tables();
  emit_clifford1(ops, e.c1a, 0);
  emit_clifford1(ops, e.c1b, 1);
  if (e.cls == 0) return;
  emit_cz(ops);
  if (e.cls >= 2) {
    emit_clifford1(ops, t.axis_swap, 0);
    emit_clifford1(ops, t.axis_swap, 1);
    emit_cz(ops);
  }
  if (e.cls == 3) {
    emit_clifford1(ops, t.axis_swap, 0);
    emit_clifford1(ops, t.axis_swap, 1);
    emit_cz(ops);
    return;
  }
  emit_clifford1(ops, t.s1[e.s1a], 0);
  emit_clifford1(ops, t.s1[e.s1b], 1);
}

// Split a 4x4 tensor product of single-atom rotations into its factors.
inline std::pair<Mat, Mat> factor_local(const Mat& m) {
  Mat r(4, 4);
  for (int r0 = 0; r0 < 2; ++r0)
    for (int c0 = 0; c0 < 2; ++c0)
      for (int r1 = 0; r1 < 2; ++r1)
        for (int c1 = 0; c1 < 2; ++c1)
          r(2 * r0 + c0, 2 * r1 + c1) = m(2 * r0 + r1, 2 * c0 + c1);
  Eigen::JacobiSVD<Mat> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()(1) > 1e-9)
    throw OptimizationFailed("operator is not a product of local rotations");
  const double scale = std::sqrt(svd.singularValues()(0));
  Mat a(2, 2), b(2, 2);
  for (int r0 = 0; r0 < 2; ++r0)
    for (int c0 = 0; c0 < 2; ++c0) {
      a(r0, c0) = svd.matrixU()(2 * r0 + c0, 0) * scale;
      b(r0, c0) = std::conj(svd.matrixV()(2 * r0 + c0, 0)) * scale;
    }
  const cxd da = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  const cxd db = b(0, 0) * b(1, 1) - b(0, 1) * b(1, 0);
  a /= std::sqrt(da);
  b /= std::sqrt(db);
  return {a, b};
}

inline int draw_index(std::mt19937_64& rng, int n) {
  return std::min(n - 1, int(uniform_sample(rng) * n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Global echo benchmarking: blocks of a common Haar-random rotation, the unit
// under test, a global X pi echo, and the unit again; a final rotation
// returns the ideal state to |00>.

enum class GerbUnit { Identity, ClockShelveUnshelve, Cz };

inline Circuit build_gerb(GerbUnit unit, int n_blocks, std::uint64_t seed) {
  if (n_blocks < 0) throw OutOfRange("block count must be nonnegative");
  Circuit c;
  c.protocol = unit == GerbUnit::Identity          ? "gerb_identity"
               : unit == GerbUnit::ClockShelveUnshelve ? "gerb_clock"
                                                       : "gerb_cz";
  c.n_atoms = 2;
  c.depth = n_blocks;
  Mat unit4 = Mat::Identity(4, 4);
  if (unit == GerbUnit::ClockShelveUnshelve) {
    Mat d = Mat::Identity(2, 2);
    d(1, 1) = -1.0;  // shelve and unshelve leave |1> with a sign flip
    unit4 = tensor(d, d);
  } else if (unit == GerbUnit::Cz) {
    unit4 = ideal_cz();
  }
  const Mat x180 = rot_x(pi);
  const Mat block = unit4 * tensor(x180, x180) * unit4;
  auto emit_unit = [&c, unit] {
    if (unit == GerbUnit::ClockShelveUnshelve) {
      detail::emit_clock_pi(c.ops, true);
      detail::emit_clock_pi(c.ops, false);
    } else if (unit == GerbUnit::Cz) {
      detail::emit_cz(c.ops);
    }
  };
  Mat m = Mat::Identity(4, 4);
  for (int k = 0; k < n_blocks; ++k) {
    const ZxzxzAngles r =
        haar_random_rotation(derive_seed(seed, "gerb.rotation", k));
    detail::emit_rotation(c.ops, r, {0, 1});
    emit_unit();
    detail::emit_x90(c.ops, {0, 1});
    detail::emit_x90(c.ops, {0, 1});
    emit_unit();
    const Mat r2 = zxzxz_unitary(r);
    m = block * tensor(r2, r2) * m;
  }
  const auto [a, b] = detail::factor_local(m);
  detail::emit_rotation(c.ops, zxzxz_angles(Mat(a.adjoint())), {0});
  detail::emit_rotation(c.ops, zxzxz_angles(Mat(b.adjoint())), {1});
  detail::emit_measure(c.ops);
  return c;
}

// Uniform Clifford randomized benchmarking with an exact table inverter.
inline Circuit build_clifford_rb(int n_qubits, int depth, std::uint64_t seed) {
  if (depth < 1) throw OutOfRange("depth must be at least one Clifford");
  Circuit c;
  c.depth = depth;
  std::mt19937_64 rng(derive_seed(seed, "rb.sequence"));
  if (n_qubits == 1) {
    c.protocol = "crb1";
    c.n_atoms = 1;
    const auto& t = detail::clifford1_tables();
    Mat prod = Mat::Identity(2, 2);
    for (int k = 0; k < depth; ++k) {
      const int idx = detail::draw_index(rng, int(t.elems.size()));
      detail::emit_clifford1(c.ops, idx, 0);
      prod = t.elems[std::size_t(idx)].u * prod;
    }
    const int inv = clifford1_find(prod.adjoint());
    if (inv < 0) throw std::logic_error("inverter missing from table");
    detail::emit_clifford1(c.ops, inv, 0);
    detail::emit_measure(c.ops);
    return c;
  }
  if (n_qubits != 2) throw OutOfRange("qubit count must be 1 or 2");
  c.protocol = "crb2";
  c.n_atoms = 2;
  const auto& g = clifford2_group();
  Mat prod = Mat::Identity(4, 4);
  for (int k = 0; k < depth; ++k) {
    const int idx = detail::draw_index(rng, int(g.size()));
    detail::emit_clifford2(c.ops, g.elements()[std::size_t(idx)]);
    prod = g.unitary(idx) * prod;
  }
  const int inv = g.find(prod.adjoint());
  if (inv < 0) throw std::logic_error("inverter missing from table");
  detail::emit_clifford2(c.ops, g.elements()[std::size_t(inv)]);
  detail::emit_measure(c.ops);
  return c;
}

inline std::vector<int> default_gerb_depths() {
  return {1, 2, 4, 8, 16, 32, 64};
}

inline std::vector<int> default_rb_depths(int n_qubits) {
  if (n_qubits == 1) return {1, 4, 16, 64, 256};
  return {1, 2, 4, 8, 16, 32};
}

// ---------------------------------------------------------------------------
// Execution: propagate the pair density matrix through a circuit per shot,
// sample the joint readout, and apply the classical detection channel.

enum class AtomOutcome : std::uint8_t { Zero, One, Clock, Lost };

struct MeasurementRecord {
  std::array<AtomOutcome, 2> outcome{AtomOutcome::Zero, AtomOutcome::Zero};
  int n_atoms = 2;
  int depth = 0;
  int realization = 0;
};

inline bool record_pre_selected(const MeasurementRecord& r) {
  for (int a = 0; a < r.n_atoms; ++a)
    if (r.outcome[std::size_t(a)] != AtomOutcome::Zero) return false;
  return true;
}

inline bool record_in_subspace(const MeasurementRecord& r) {
  for (int a = 0; a < r.n_atoms; ++a) {
    const AtomOutcome o = r.outcome[std::size_t(a)];
    if (o != AtomOutcome::Zero && o != AtomOutcome::One) return false;
  }
  return true;
}

inline bool record_leaked(const MeasurementRecord& r) {
  for (int a = 0; a < r.n_atoms; ++a)
    if (r.outcome[std::size_t(a)] == AtomOutcome::Clock) return true;
  return false;
}

inline bool record_lost(const MeasurementRecord& r) {
  for (int a = 0; a < r.n_atoms; ++a)
    if (r.outcome[std::size_t(a)] == AtomOutcome::Lost) return true;
  return false;
}

struct ExecuteOptions {
  CzGateParams gate = default_cz_params();
  bool readout = true;          // classical detection channel on each atom
  double readout_flip = 2e-3;   // qubit misclassification probability
  double readout_loss = 5e-3;   // probability an atom leaves no image
  double cz_depolarizing = 0.0; // injected average infidelity per cz
};

namespace detail {

inline const std::array<Mat, 16>& depolarizing_pair_paulis() {
  static const std::array<Mat, 16> ops = [] {
    const std::array<Mat, 4> p{Mat::Identity(2, 2), pauli_x(), pauli_y(),
                               pauli_z()};
    std::array<Mat, 16> out;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        out[4 * a + b] = op_on_atom(embed_qubit_op(p[a]), 0) *
                         op_on_atom(embed_qubit_op(p[b]), 1);
    return out;
  }();
  return ops;
}

// Uniform qubit-subspace Pauli kick with probability q = (4/3) epsilon gives
// an average gate infidelity of exactly epsilon on the pair subspace.
inline void depolarize_qubit_pair(Mat& rho, double prob,
                                  std::mt19937_64& rng) {
  const double u = uniform_sample(rng);
  const double pick = uniform_sample(rng);
  if (u >= prob) return;
  const int k = std::min(15, int(pick * 16.0));
  if (k == 0) return;
  const Mat& p = depolarizing_pair_paulis()[std::size_t(k)];
  rho = p * rho * p.adjoint();
}

inline int sample_pair_level(const Mat& rho, std::mt19937_64& rng) {
  std::array<double, std::size_t(lvl::pair_dim)> p{};
  double total = 0.0;
  for (int i = 0; i < lvl::pair_dim; ++i) {
    p[std::size_t(i)] = std::max(rho(i, i).real(), 0.0);
    total += p[std::size_t(i)];
  }
  double r = uniform_sample(rng) * total;
  for (int i = 0; i < lvl::pair_dim; ++i) {
    r -= p[std::size_t(i)];
    if (r <= 0.0) return i;
  }
  return lvl::pair_dim - 1;
}

inline AtomOutcome outcome_of_level(int level) {
  if (level == lvl::q0) return AtomOutcome::Zero;
  if (level == lvl::q1) return AtomOutcome::One;
  if (level == lvl::clk) return AtomOutcome::Clock;
  return AtomOutcome::Lost;  // Rydberg and dark populations leave no image
}

}  // namespace detail

inline std::vector<MeasurementRecord> execute(const Circuit& c,
                                              const NoiseModel& nm,
                                              int n_shots, std::uint64_t seed,
                                              const ExecuteOptions& opt = {}) {
  if (n_shots <= 0) throw OutOfRange("shot count must be positive");
  if (c.n_atoms < 1 || c.n_atoms > 2)
    throw OutOfRange("circuits act on one or two atoms");
  const CzGateExecutor ex(opt.gate, nm);
  const std::array<double, 2> vz =
      detail::reference_vz_angles(opt.gate, nm.blockade_u);
  bool needs_shot = false;
  for (const GateOp& op : c.ops)
    needs_shot = needs_shot || op.kind == GateOp::Kind::clock_pi ||
                 op.kind == GateOp::Kind::full_cz ||
                 op.kind == GateOp::Kind::cz_pulse;
  const bool redraw = detail::model_has_random_draws(nm);
  std::optional<CzGateExecutor::ShotState> shared;
  if (needs_shot && !redraw)
    shared = ex.prepare_shot(derive_seed(seed, "shot", 0));
  const double dep_prob = std::min(1.0, opt.cz_depolarizing * 4.0 / 3.0);
  std::vector<MeasurementRecord> out;
  out.reserve(std::size_t(n_shots));
  for (int s = 0; s < n_shots; ++s) {
    const std::uint64_t shot_seed = derive_seed(seed, "shot", std::uint64_t(s));
    std::optional<CzGateExecutor::ShotState> local;
    const CzGateExecutor::ShotState* st = nullptr;
    if (needs_shot) {
      if (redraw) {
        local = ex.prepare_shot(shot_seed);
        st = &*local;
      } else {
        st = &*shared;
      }
    }
    std::mt19937_64 classical(derive_seed(shot_seed, "classical"));
    Mat rho = Mat::Zero(lvl::pair_dim, lvl::pair_dim);
    rho(0, 0) = 1.0;
    int gate_count = 0;
    for (const GateOp& op : c.ops) {
      switch (op.kind) {
        case GateOp::Kind::xhalf:
          for (int t : op.targets) ex.apply_xhalf(rho, t, op.angle);
          break;
        case GateOp::Kind::virtual_z:
          for (int t : op.targets) ex.apply_virtual_z(rho, t, op.angle);
          break;
        case GateOp::Kind::clock_pi:
          ex.apply_clock_pi(rho, *st,
                            derive_seed(shot_seed, "gate", gate_count++));
          break;
        case GateOp::Kind::full_cz:
          ex.apply_cz(rho, *st, derive_seed(shot_seed, "gate", gate_count++));
          ex.apply_virtual_z(rho, 0, vz[0]);
          ex.apply_virtual_z(rho, 1, vz[1]);
          if (dep_prob > 0.0)
            detail::depolarize_qubit_pair(rho, dep_prob, classical);
          break;
        case GateOp::Kind::cz_pulse: {
          const Channel step = detail::uv_channel(op.pulse, st->uv, nm);
          rho = step.apply(rho);
          break;
        }
        case GateOp::Kind::measure_all:
          break;
      }
    }
    MeasurementRecord rec;
    rec.n_atoms = c.n_atoms;
    rec.depth = c.depth;
    rec.realization = c.realization;
    const int idx = detail::sample_pair_level(rho, classical);
    rec.outcome[0] = detail::outcome_of_level(idx / lvl::atom_dim);
    rec.outcome[1] = detail::outcome_of_level(idx % lvl::atom_dim);
    if (opt.readout) {
      for (int a = 0; a < c.n_atoms; ++a) {
        const double u_loss = uniform_sample(classical);
        const double u_flip = uniform_sample(classical);
        AtomOutcome& o = rec.outcome[std::size_t(a)];
        if (u_loss < opt.readout_loss) {
          o = AtomOutcome::Lost;
        } else if (o == AtomOutcome::Zero && u_flip < opt.readout_flip) {
          o = AtomOutcome::One;
        } else if (o == AtomOutcome::One && u_flip < opt.readout_flip) {
          o = AtomOutcome::Zero;
        }
      }
    }
    out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation: per-depth return probabilities with scatter across circuit
// realizations.

struct DepthStats {
  int depth = 0;
  int n_realizations = 0;
  int n_records = 0;
  double pre = 0.0, pre_sem = 0.0;            // all atoms back in |0>
  double post = 0.0, post_sem = 0.0;          // |0..0> among subspace shots
  double subspace = 0.0, subspace_sem = 0.0;  // all atoms in {|0>, |1>}
  double leak = 0.0, leak_sem = 0.0;          // any clock-level image
  double survival = 0.0, survival_sem = 0.0;  // no atom lost
};

namespace detail {

inline std::pair<double, double> mean_sem(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  if (v.size() < 2) return {m, 0.0};
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= double(v.size() - 1);
  return {m, std::sqrt(var / double(v.size()))};
}

}  // namespace detail

inline std::vector<DepthStats> classify_and_aggregate(
    const std::vector<MeasurementRecord>& records) {
  struct Acc {
    int n = 0, pre = 0, sub = 0, leak = 0, lost = 0;
  };
  std::map<int, std::map<int, Acc>> by_depth;
  for (const MeasurementRecord& r : records) {
    Acc& a = by_depth[r.depth][r.realization];
    ++a.n;
    a.pre += record_pre_selected(r) ? 1 : 0;
    a.sub += record_in_subspace(r) ? 1 : 0;
    a.leak += record_leaked(r) ? 1 : 0;
    a.lost += record_lost(r) ? 1 : 0;
  }
  std::vector<DepthStats> out;
  out.reserve(by_depth.size());
  for (const auto& [depth, reals] : by_depth) {
    DepthStats d;
    d.depth = depth;
    d.n_realizations = int(reals.size());
    std::vector<double> pre, post, sub, leak, survival;
    for (const auto& [real, a] : reals) {
      (void)real;
      d.n_records += a.n;
      pre.push_back(double(a.pre) / double(a.n));
      sub.push_back(double(a.sub) / double(a.n));
      leak.push_back(double(a.leak) / double(a.n));
      survival.push_back(1.0 - double(a.lost) / double(a.n));
      if (a.sub > 0) post.push_back(double(a.pre) / double(a.sub));
    }
    std::tie(d.pre, d.pre_sem) = detail::mean_sem(pre);
    std::tie(d.post, d.post_sem) = detail::mean_sem(post);
    std::tie(d.subspace, d.subspace_sem) = detail::mean_sem(sub);
    std::tie(d.leak, d.leak_sem) = detail::mean_sem(leak);
    std::tie(d.survival, d.survival_sem) = detail::mean_sem(survival);
    out.push_back(std::move(d));
  }
  return out;
}

enum class DecayObservable { PreSelected, PostSelected, Leak, Survival };

struct DecayPoint {
  double depth = 0.0;
  double value = 0.0;
  double sem = 0.0;
};

inline std::vector<DecayPoint> decay_points(const std::vector<DepthStats>& st,
                                            DecayObservable o) {
  std::vector<DecayPoint> out;
  out.reserve(st.size());
  for (const DepthStats& d : st) {
    switch (o) {
      case DecayObservable::PreSelected:
        out.push_back({double(d.depth), d.pre, d.pre_sem});
        break;
      case DecayObservable::PostSelected:
        out.push_back({double(d.depth), d.post, d.post_sem});
        break;
      case DecayObservable::Leak:
        out.push_back({double(d.depth), d.leak, d.leak_sem});
        break;
      case DecayObservable::Survival:
        out.push_back({double(d.depth), d.survival, d.survival_sem});
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weighted exponential-decay fit a p^x + b with the floor b fixed by the
// protocol: 0 for loss-dominated curves, 1/9 for pre-selected clock blocks,
// 1/4 for pair subspace observables, 1/2 for a single qubit.

struct DecayFit {
  double a = 0.0;
  double p = 1.0;
  double b = 0.0;
  double sigma_a = 0.0;
  double sigma_p = 0.0;
  double chi2 = 0.0;
  int n_points = 0;
};

inline DecayFit fit_decay(std::vector<DecayPoint> pts, double floor_b) {
  const std::array<double, 4> allowed{0.0, 1.0 / 9.0, 0.25, 0.5};
  bool legal = false;
  for (double v : allowed) legal = legal || std::abs(floor_b - v) < 1e-12;
  if (!legal) throw OutOfRange("decay floor must be one of 0, 1/9, 1/4, 1/2");
  std::sort(pts.begin(), pts.end(),
            [](const DecayPoint& l, const DecayPoint& r) {
              return l.depth < r.depth;
            });
  int distinct = pts.empty() ? 0 : 1;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].depth != pts[i - 1].depth) ++distinct;
  if (distinct < 3) throw OutOfRange("need at least three distinct depths");

  std::vector<double> w(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double s = std::max(pts[i].sem, 1e-6);
    w[i] = 1.0 / (s * s);
  }
  const double af = pts.front().value - floor_b;
  const double al = pts.back().value - floor_b;
  double p = 0.9;
  if (af > 1e-9 && al > 1e-9 && pts.back().depth > pts.front().depth)
    p = std::clamp(std::pow(al / af, 1.0 / (pts.back().depth - pts.front().depth)),
                   1e-4, 1.0);
  double a = af > 1e-9
                 ? std::clamp(af / std::max(std::pow(p, pts.front().depth), 1e-6),
                              1e-6, 2.0)
                 : 0.1;

  auto chi2_of = [&](double ca, double cp) {
    double c = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double r = ca * std::pow(cp, pts[i].depth) + floor_b - pts[i].value;
      c += w[i] * r * r;
    }
    return c;
  };
  double chi2 = chi2_of(a, p);
  double lam = 1e-3;
  for (int iter = 0; iter < 200; ++iter) {
    double h00 = 0.0, h01 = 0.0, h11 = 0.0, g0 = 0.0, g1 = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double x = pts[i].depth;
      const double px = std::pow(p, x);
      const double da = px;
      const double dp = x > 0.0 ? a * x * std::pow(p, x - 1.0) : 0.0;
      const double r = a * px + floor_b - pts[i].value;
      h00 += w[i] * da * da;
      h01 += w[i] * da * dp;
      h11 += w[i] * dp * dp;
      g0 += w[i] * da * r;
      g1 += w[i] * dp * r;
    }
    bool stepped = false;
    double step = 0.0;
    for (int damp = 0; damp < 40 && !stepped; ++damp) {
      const double d00 = h00 * (1.0 + lam);
      const double d11 = h11 * (1.0 + lam);
      const double det = d00 * d11 - h01 * h01;
      if (std::abs(det) < 1e-300) {
        lam *= 10.0;
        continue;
      }
      const double sa = (-g0 * d11 + g1 * h01) / det;
      const double sp = (-g1 * d00 + g0 * h01) / det;
      const double na = std::clamp(a + sa, -2.0, 2.0);
      const double np = std::clamp(p + sp, 0.0, 1.0);
      const double nc = chi2_of(na, np);
      if (std::isfinite(nc) && nc <= chi2 + 1e-15) {
        step = std::abs(na - a) + std::abs(np - p);
        a = na;
        p = np;
        chi2 = nc;
        lam = std::max(lam / 3.0, 1e-12);
        stepped = true;
      } else {
        lam *= 4.0;
      }
    }
    if (!stepped || step < 1e-13) break;
  }
  if (!std::isfinite(a) || !std::isfinite(p) || !std::isfinite(chi2))
    throw FitDiverged("decay fit produced non-finite parameters");

  double h00 = 0.0, h01 = 0.0, h11 = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = pts[i].depth;
    const double da = std::pow(p, x);
    const double dp = x > 0.0 ? a * x * std::pow(p, x - 1.0) : 0.0;
    h00 += w[i] * da * da;
    h01 += w[i] * da * dp;
    h11 += w[i] * dp * dp;
  }
  const double det = h00 * h11 - h01 * h01;
  DecayFit fit;
  fit.a = a;
  fit.p = p;
  fit.b = floor_b;
  fit.chi2 = chi2;
  fit.n_points = int(pts.size());
  if (det > 1e-300) {
    fit.sigma_a = std::sqrt(h11 / det);
    fit.sigma_p = std::sqrt(h00 / det);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Fidelity extraction from fitted decays.

struct FidelityEstimate {
  double clifford_infidelity = 0.0;
  double clifford_sigma = 0.0;
  double cz_infidelity = 0.0;
  double cz_sigma = 0.0;
};

// Per-Clifford error (1 - p)(1 - b), then the entangling-gate error after
// subtracting the single-qubit contribution at the table's mean gate counts.
// d is the dimension of the measured subspace (2 for one atom, 4 for a pair);
// a nonzero fitted floor must equal 1/d.
inline FidelityEstimate extract_fidelity(const DecayFit& fit, int d,
                                         const GateCounts& counts,
                                         double oneq_error_per_gate) {
  if (d != 2 && d != 4) throw OutOfRange("subspace dimension must be 2 or 4");
  if (fit.b > 0.0 && std::abs(fit.b - 1.0 / double(d)) > 1e-9)
    throw OutOfRange("decay floor does not match the subspace dimension");
  if (counts.cz_per_clifford <= 0.0)
    throw OutOfRange("mean entangling-gate count must be positive");
  FidelityEstimate e;
  e.clifford_infidelity = (1.0 - fit.p) * (1.0 - fit.b);
  e.clifford_sigma = fit.sigma_p * (1.0 - fit.b);
  e.cz_infidelity =
      (e.clifford_infidelity - counts.x90_per_clifford * oneq_error_per_gate) /
      counts.cz_per_clifford;
  e.cz_sigma = e.clifford_sigma / counts.cz_per_clifford;
  return e;
}

// Per-unit error of an echo block relative to the identity-unit reference:
// each block contains the unit twice.
inline double gerb_unit_infidelity(const DecayFit& unit,
                                   const DecayFit& reference) {
  return 0.5 * ((1.0 - unit.p) * (1.0 - unit.b) -
                (1.0 - reference.p) * (1.0 - reference.b));
}

// ---------------------------------------------------------------------------
// Depth scans: independent circuits per (depth, realization) cell, fanned out
// over a thread pool with a fixed seed tree so results do not depend on the
// job count.

struct ScanSettings {
  std::vector<int> depths;
  int n_circuits = 20;
  int n_shots = 20;
  int n_jobs = 1;
};

struct ProtocolScan {
  std::vector<MeasurementRecord> records;
  std::vector<DepthStats> stats;
};

namespace detail {

template <class BuildFn>
inline ProtocolScan run_scan(BuildFn&& build, const NoiseModel& nm,
                             const ScanSettings& s, std::uint64_t seed,
                             const ExecuteOptions& opt) {
  if (s.depths.empty()) throw OutOfRange("depth list is empty");
  if (s.n_circuits <= 0 || s.n_shots <= 0)
    throw OutOfRange("circuit and shot counts must be positive");
  const int n_tasks = int(s.depths.size()) * s.n_circuits;
  std::vector<std::vector<MeasurementRecord>> slots;
  slots.resize(std::size_t(n_tasks));
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_guard;
  auto work = [&] {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= n_tasks || failed.load()) break;
      try {
        const int depth = s.depths[std::size_t(t) / std::size_t(s.n_circuits)];
        const int real = t % s.n_circuits;
        const std::uint64_t circuit_seed = derive_seed(
            derive_seed(seed, "depth", std::uint64_t(depth)), "circuit",
            std::uint64_t(real));
        Circuit c = build(depth, circuit_seed);
        c.realization = real;
        slots[std::size_t(t)] =
            execute(c, nm, s.n_shots, derive_seed(circuit_seed, "execute"), opt);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_guard);
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(s.n_jobs, 1, n_tasks);
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(n_threads));
    for (int k = 0; k < n_threads; ++k) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }
  if (failed.load()) std::rethrow_exception(error);
  ProtocolScan out;
  out.records.reserve(std::size_t(n_tasks) * std::size_t(s.n_shots));
  for (const auto& slot : slots)
    out.records.insert(out.records.end(), slot.begin(), slot.end());
  out.stats = classify_and_aggregate(out.records);
  return out;
}

}  // namespace detail

inline ProtocolScan run_crb_scan(int n_qubits, const NoiseModel& nm,
                                 const ScanSettings& s, std::uint64_t seed,
                                 const ExecuteOptions& opt = {}) {
  return detail::run_scan(
      [n_qubits](int depth, std::uint64_t circuit_seed) {
        return build_clifford_rb(n_qubits, depth, circuit_seed);
      },
      nm, s, seed, opt);
}

inline ProtocolScan run_gerb_scan(GerbUnit unit, const NoiseModel& nm,
                                  const ScanSettings& s, std::uint64_t seed,
                                  const ExecuteOptions& opt = {}) {
  return detail::run_scan(
      [unit](int depth, std::uint64_t circuit_seed) {
        return build_gerb(unit, depth, circuit_seed);
      },
      nm, s, seed, opt);
}

}  // namespace gatekit

#endif
