// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "gatekit/qops.hpp"

using namespace gatekit;
using Catch::Matchers::WithinAbs;

namespace {

Channel amplitude_damping(double gamma) {
  Mat k0 = Mat::Zero(2, 2), k1 = Mat::Zero(2, 2);
  k0(0, 0) = 1.0;
  k0(1, 1) = std::sqrt(1.0 - gamma);
  k1(0, 1) = std::sqrt(gamma);
  return Channel::from_kraus({k0, k1});
}

Channel two_qubit_depolarizing(double p, const Mat& u) {
  Mat s = Mat::Zero(16, 16);
  for (int r = 0; r < 4; ++r)
    for (int m = 0; m < 4; ++m) s(r * 4 + r, m * 4 + m) = p / 4.0;
  return Channel((1.0 - p) * Channel::from_unitary(u).superop() + s);
}

}  // namespace

TEST_CASE("tensor product matches hand-expanded Kronecker blocks", "[qops]") {
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 0, 5, 6, 7;
  const Mat t = tensor(a, b);
  Mat expect(4, 4);
  expect << 0, 5, 0, 10, 6, 7, 12, 14, 0, 15, 0, 20, 18, 21, 24, 28;
  REQUIRE((t - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("pair indexing puts atom 1 in the left tensor factor", "[qops]") {
  const Vec v = Eigen::Map<const Vec>(
      tensor(basis_ket(lvl::atom_dim, lvl::clk), basis_ket(lvl::atom_dim, lvl::ryd)).eval().data(),
      lvl::pair_dim);
  REQUIRE_THAT(std::abs(v(pair_index(lvl::clk, lvl::ryd))), WithinAbs(1.0, 1e-14));
  REQUIRE(pair_index(lvl::q1, lvl::q1) == 6);
  REQUIRE(qubit_pair_basis == std::array<int, 4>{0, 1, 5, 6});
}

TEST_CASE("amplitude damping acts as the textbook channel", "[qops]") {
  const double gamma = 0.3;
  const Channel e = amplitude_damping(gamma);

  Mat excited = Mat::Zero(2, 2);
  excited(1, 1) = 1.0;
  const Mat out = e.apply(excited);
  REQUIRE_THAT(out(0, 0).real(), WithinAbs(gamma, 1e-14));
  REQUIRE_THAT(out(1, 1).real(), WithinAbs(1.0 - gamma, 1e-14));

  Mat coh = Mat::Zero(2, 2);
  coh(0, 1) = 1.0;
  REQUIRE_THAT(std::abs(e.apply(coh)(0, 1)), WithinAbs(std::sqrt(1.0 - gamma), 1e-14));

  REQUIRE(e.is_trace_preserving());
  REQUIRE(e.is_completely_positive());
}

TEST_CASE("channel property checks reject non-physical maps", "[qops]") {
  Mat half = 0.5 * Mat::Identity(2, 2);
  REQUIRE_FALSE(Channel::from_kraus({half}).is_trace_preserving());

  Mat transpose_map = Mat::Zero(4, 4);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) transpose_map(c * 2 + r, r * 2 + c) = 1.0;
  const Channel t{transpose_map};
  REQUIRE(t.is_trace_preserving());
  REQUIRE_FALSE(t.is_completely_positive());
}

TEST_CASE("channel composition and tensor structure", "[qops]") {
  const Channel e1 = amplitude_damping(0.2);
  const Channel e2 = Channel::from_unitary(rot_y(0.7));

  Mat rho = Mat::Zero(2, 2);
  rho(0, 0) = 0.25;
  rho(1, 1) = 0.75;
  rho(0, 1) = rho(1, 0) = 0.1;
  REQUIRE((e1.then(e2).apply(rho) - e2.apply(e1.apply(rho))).cwiseAbs().maxCoeff() < 1e-14);

  Mat k0 = Mat::Zero(2, 2), k1 = Mat::Zero(2, 2);
  k0(0, 0) = 1.0;
  k0(1, 1) = std::sqrt(0.8);
  k1(0, 1) = std::sqrt(0.2);
  const Mat id = Mat::Identity(2, 2);
  const Channel direct = Channel::from_kraus({tensor(k0, id), tensor(k1, id)});
  const Channel product = amplitude_damping(0.2).tensor_with(Channel::identity(2));
  REQUIRE((direct.superop() - product.superop()).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("partial trace recovers single-atom factors", "[qops]") {
  Mat ra = Mat::Zero(2, 2), rb = Mat::Zero(3, 3);
  ra << 0.7, 0.2, 0.2, 0.3;
  rb(0, 0) = 0.5;
  rb(2, 2) = 0.5;
  rb(0, 2) = rb(2, 0) = 0.25;
  const Mat joint = tensor(ra, rb);
  REQUIRE((partial_trace(joint, 2, 3, 0) - ra).cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE((partial_trace(joint, 2, 3, 1) - rb).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("controlled-Z fidelity is exact for the ideal gate", "[qops]") {
  const auto r4 = avg_gate_fidelity(Channel::from_unitary(ideal_cz()), ideal_cz());
  REQUIRE_THAT(r4.f_avg, WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(r4.f_pro, WithinAbs(1.0, 1e-12));

  const auto r25 = avg_gate_fidelity(Channel::from_unitary(ideal_cz_pair()), ideal_cz());
  REQUIRE_THAT(r25.f_avg, WithinAbs(1.0, 1e-12));

  const Mat phased = std::exp(iu * 0.7) * ideal_cz();
  REQUIRE_THAT(avg_gate_fidelity(Channel::from_unitary(phased), ideal_cz()).f_avg,
               WithinAbs(1.0, 1e-12));

  REQUIRE_THAT(leakage_loss(Channel::from_unitary(ideal_cz_pair())), WithinAbs(0.0, 1e-12));
}

TEST_CASE("two-qubit depolarizing fidelity matches the closed form", "[qops]") {
  const double p = 0.2;
  const Channel e = two_qubit_depolarizing(p, ideal_cz());
  REQUIRE(e.is_trace_preserving());
  REQUIRE(e.is_completely_positive());
  const auto r = avg_gate_fidelity(e, ideal_cz(), false);
  REQUIRE_THAT(r.f_pro, WithinAbs(1.0 - p + p / 16.0, 1e-12));
  REQUIRE_THAT(r.f_avg, WithinAbs(0.85, 1e-12));
}

TEST_CASE("virtual Z optimization absorbs per-atom phase offsets", "[qops]") {
  const double alpha = 0.3, beta = 0.2;
  const Mat zz = op_on_atom(virtual_z_atom(alpha), 0) * op_on_atom(virtual_z_atom(beta), 1);
  const Channel e = Channel::from_unitary(zz * ideal_cz_pair());

  const auto plain = avg_gate_fidelity(e, ideal_cz(), false);
  REQUIRE(plain.f_avg < 0.999);

  const auto opt = avg_gate_fidelity(e, ideal_cz(), true);
  REQUIRE_THAT(opt.f_avg, WithinAbs(1.0, 1e-10));
  REQUIRE_THAT(opt.virtual_z[0], WithinAbs(-alpha, 1e-8));
  REQUIRE_THAT(opt.virtual_z[1], WithinAbs(-beta, 1e-8));

  REQUIRE_THAT(avg_gate_fidelity_at(qubit_process_tensor(e), ideal_cz(), opt.virtual_z[0],
                                    opt.virtual_z[1]),
               WithinAbs(1.0, 1e-10));
  REQUIRE_THAT(avg_gate_fidelity_at(qubit_process_tensor(e), ideal_cz(), 0.0, 0.0),
               WithinAbs(plain.f_avg, 1e-12));
}

TEST_CASE("population lost from |11⟩ shows up in fidelity and leakage", "[qops]") {
  const double ell = 0.36;
  Mat k0 = Mat::Identity(lvl::pair_dim, lvl::pair_dim);
  const int q11 = pair_index(lvl::q1, lvl::q1);
  k0(q11, q11) = std::sqrt(1.0 - ell);
  Mat k1 = Mat::Zero(lvl::pair_dim, lvl::pair_dim);
  k1(pair_index(lvl::dark, lvl::dark), q11) = std::sqrt(ell);
  const Channel e = Channel::from_unitary(ideal_cz_pair()).then(Channel::from_kraus({k0, k1}));

  REQUIRE(e.is_trace_preserving());
  REQUIRE_THAT(leakage_loss(e), WithinAbs(ell / 4.0, 1e-12));
  const auto r = avg_gate_fidelity(e, ideal_cz());
  REQUIRE_THAT(r.f_pro, WithinAbs((9.0 + 6.0 * std::sqrt(1.0 - ell) + (1.0 - ell)) / 16.0, 1e-10));
}

TEST_CASE("single-qubit fidelity path absorbs a Z rotation", "[qops]") {
  const Channel e = Channel::from_unitary(embed_qubit_op(rot_z(0.4)));
  const Mat id2 = Mat::Identity(2, 2);
  const auto opt = avg_gate_fidelity(e, id2, true);
  REQUIRE_THAT(opt.f_avg, WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(opt.virtual_z[0], WithinAbs(-0.4, 1e-10));
  REQUIRE(avg_gate_fidelity(e, id2, false).f_avg < 1.0 - 1e-3);
}

TEST_CASE("dimension checks reject mismatched operands", "[qops]") {
  REQUIRE_THROWS_AS(Channel(Mat::Zero(3, 3)), DimensionMismatch);
  REQUIRE_THROWS_AS(avg_gate_fidelity(amplitude_damping(0.1), ideal_cz()), DimensionMismatch);
  REQUIRE_THROWS_AS(basis_ket(2, 5), OutOfRange);
  REQUIRE_THROWS_AS(op_on_atom(Mat::Identity(2, 2), 0), DimensionMismatch);
}
