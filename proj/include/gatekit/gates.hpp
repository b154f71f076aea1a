// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_GATES_HPP
#define GATEKIT_GATES_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "gatekit/dynamics.hpp"
#include "gatekit/fits.hpp"
#include "gatekit/pulses.hpp"
#include "gatekit/qops.hpp"

namespace gatekit {

struct NoiseSource {
  bool enabled = true;
  double value = 0.0;
};

struct ThermalSource {
  bool enabled = true;
  double nbar = 0.0;
  double eta = 0.0;
};

struct PsdSource {
  bool enabled = false;
  PsdTable table;
};

// Frequency-noise density of the shelving laser, Hz^2/Hz against Hz: a 1/f^2
// wall at low frequency, a plateau, and a servo bump near 25 kHz.  The shape
// is an estimate; data/clock_psd.txt ships the same table.
inline PsdTable default_clock_psd() {
  return PsdTable::from_points(
      {1e2, 3e2, 1e3, 3e3, 9e3, 2.5e4, 6e4, 2e5, 5e5},
      {4.2, 0.85, 0.16, 0.095, 0.72, 1.30, 0.86, 0.36, 0.22});
}

// Error sources acting on the gate, each with an on/off switch and its
// physical scale, plus the drive parameters they act against.  Values are in
// SI units unless noted.
struct NoiseModel {
  NoiseSource clock_static_detuning_sigma{true, 33.0};  // Hz rms, common mode
  PsdSource clock_psd;                                  // S_nu(f) in Hz^2/Hz
  NoiseSource clock_t1_trap_scatter{true, 1.06};        // s
  ThermalSource thermal{true, 0.25, 0.26};
  NoiseSource clock_lightshift_mean{true, 125.0};       // Hz, pulse average
  NoiseSource atom_loss_t{true, 5.0};                   // s
  NoiseSource ryd_t1{true, 65e-6};                      // s
  NoiseSource ryd_t2star{true, 3.4e-6};                 // s
  NoiseSource uv_area_jitter_rms{true, 0.004};          // fractional, common
  NoiseSource oneq_error_per_gate{true, 3.7e-4};        // average infidelity

  double blockade_u = two_pi * 160e6;                   // rad/s
  double omega_clk = pi / (blackman_mean * 130e-6);     // peak, rad/s
  double omega_ryd = two_pi * 9.4e6;                    // rad/s

  static NoiseModel noiseless() {
    NoiseModel nm;
    nm.clock_static_detuning_sigma.enabled = false;
    nm.clock_psd.enabled = false;
    nm.clock_t1_trap_scatter.enabled = false;
    nm.thermal.enabled = false;
    nm.clock_lightshift_mean.enabled = false;
    nm.atom_loss_t.enabled = false;
    nm.ryd_t1.enabled = false;
    nm.ryd_t2star.enabled = false;
    nm.uv_area_jitter_rms.enabled = false;
    nm.oneq_error_per_gate.enabled = false;
    return nm;
  }

  // All sources at their measured scales, including the shipped laser PSD.
  static NoiseModel defaults() {
    NoiseModel nm;
    nm.clock_psd.enabled = true;
    nm.clock_psd.table = default_clock_psd();
    return nm;
  }
};

// Drive settings for the full gate: the composite shelving pulse peak and the
// phase-modulated pulse on the clock-Rydberg transition.
struct CzGateParams {
  double clock_peak_rabi = 0.0;  // rad/s
  UvPulseParams uv{};
};

// One element of a gate sequence acting on a pair register.
struct GateOp {
  enum class Kind { xhalf, virtual_z, clock_pi, cz_pulse, full_cz, measure_all };
  Kind kind = Kind::measure_all;
  double angle = 0.0;     // xhalf drive phase, or the virtual-Z frame angle
  bool shelve = true;     // clock_pi direction
  UvPulseParams pulse{};  // explicit entangling pulse for cz_pulse ops
  std::vector<int> targets;
};

// Calibrated entangling-pulse coordinates (A, ω/Ω, φ, TΩ/2π, Δ/Ω) for the
// default operating point U = 2π·160 MHz, Ω_ryd = 2π·9.4 MHz; noiseless
// infidelity 9.9e-7 with entangling phase π within 4e-5.
inline constexpr PulseTuple cz_pulse_defaults{
    0.5995873874, 1.3337637911, 0.0, 1.2119140625, 0.0876126299};

inline CzGateParams default_cz_params() {
  CzGateParams p;
  p.clock_peak_rabi = pi / (blackman_mean * 130e-6);
  p.uv = pulse_from_tuple(cz_pulse_defaults, two_pi * 9.4e6);
  return p;
}

namespace detail {

inline std::vector<Entry> lift_atom(const std::vector<Entry>& single, int atom) {
  std::vector<Entry> out;
  out.reserve(single.size() * std::size_t(lvl::atom_dim));
  for (const Entry& e : single)
    for (int k = 0; k < lvl::atom_dim; ++k) {
      if (atom == 0)
        out.push_back({e.r * lvl::atom_dim + k, e.c * lvl::atom_dim + k, e.v});
      else
        out.push_back({k * lvl::atom_dim + e.r, k * lvl::atom_dim + e.c, e.v});
    }
  return out;
}

// Places a one-atom sparse operator in a 5-level space (atom < 0) or on one
// factor of the pair space.
inline std::vector<Entry> level_op(int a, int b, cxd v, int atom) {
  std::vector<Entry> single{{a, b, v}};
  return atom < 0 ? single : lift_atom(single, atom);
}

struct ClockContext {
  double delta_static = 0.0;  // rad/s on |clk⟩
  double dw_scale = 1.0;      // motional Rabi reduction for this atom
  std::shared_ptr<const NoiseTrajectory> phase;  // laser phase, radians
  double phase_offset = 0.0;  // s consumed from the trajectory already
};

// Complex drive amplitude on the |1>-|c> transition: envelope, segment phase,
// motional Rabi reduction, and the sampled laser phase when present.
inline std::function<cxd(double)> clock_drive_amp(const CompositePulse& pulse,
                                                  const ClockContext& ctx,
                                                  const NoiseModel& nm) {
  const CompositePulse pc = pulse;
  const double scale = ctx.dw_scale;
  const std::shared_ptr<const NoiseTrajectory> traj =
      nm.clock_psd.enabled ? ctx.phase : nullptr;
  const double offset = ctx.phase_offset;
  return [pc, scale, traj, offset](double t) -> cxd {
    const double om = pc.envelope(t);
    if (om == 0.0) return cxd{};
    double ph = pc.phase_at(t);
    if (traj) ph += traj->at(t + offset);
    return 0.5 * scale * om * std::exp(iu * ph);
  };
}

// Drive-induced shift of the |1>-|c> transition, following the pulse
// intensity, with the static frequency calibration absorbing its pulse
// average: only the zero-mean modulation remains.  Empty when disabled.
inline std::function<cxd(double)> clock_lightshift_mod(
    const CompositePulse& pulse, const NoiseModel& nm) {
  if (!nm.clock_lightshift_mean.enabled) return {};
  const CompositePulse pc = pulse;
  const double ls = two_pi * nm.clock_lightshift_mean.value;
  return [pc, ls](double t) -> cxd {
    const double pk = pc.segments[std::size_t(pc.segment_at(t))].peak_rabi;
    const double w = pk > 0.0 ? pc.envelope(t) / pk : 0.0;
    return cxd{ls * (w * w - blackman_sq_mean), 0.0};
  };
}

inline bool clock_decay_active(const NoiseModel& nm) {
  return (nm.clock_t1_trap_scatter.enabled &&
          nm.clock_t1_trap_scatter.value > 0.0) ||
         (nm.atom_loss_t.enabled && nm.atom_loss_t.value > 0.0);
}

inline bool uv_decay_active(const NoiseModel& nm) {
  return (nm.ryd_t1.enabled && nm.ryd_t1.value > 0.0) ||
         (nm.atom_loss_t.enabled && nm.atom_loss_t.value > 0.0);
}

// Adds one atom's shelving drive and the decay channels tied to the clock
// state.  dim is 5 (atom = -1) or 25 (atom = 0 or 1); the generator block must
// match dim*dim.
inline void add_clock_terms(SparseGenerator& gen, int dim, int atom,
                            const CompositePulse& pulse, const ClockContext& ctx,
                            const NoiseModel& nm) {
  auto drive = clock_drive_amp(pulse, ctx, nm);
  gen.add_driven(commutator_entries(dim, level_op(lvl::clk, lvl::q1, 1.0, atom)), drive);
  gen.add_driven(commutator_entries(dim, level_op(lvl::q1, lvl::clk, 1.0, atom)),
                 [drive](double t) { return std::conj(drive(t)); });

  if (ctx.delta_static != 0.0)
    gen.add_static(commutator_entries(
        dim, level_op(lvl::clk, lvl::clk, ctx.delta_static, atom)));

  if (auto shift = clock_lightshift_mod(pulse, nm))
    gen.add_driven(commutator_entries(dim, level_op(lvl::clk, lvl::clk, 1.0, atom)),
                   shift);

  if (nm.clock_t1_trap_scatter.enabled && nm.clock_t1_trap_scatter.value > 0.0) {
    const double amp = std::sqrt(0.5 / nm.clock_t1_trap_scatter.value);
    gen.add_static(jump_entries(dim, level_op(lvl::q0, lvl::clk, amp, atom)));
    gen.add_static(jump_entries(dim, level_op(lvl::q1, lvl::clk, amp, atom)));
  }

  if (nm.atom_loss_t.enabled && nm.atom_loss_t.value > 0.0) {
    const double amp = std::sqrt(1.0 / nm.atom_loss_t.value);
    gen.add_static(jump_entries(dim, level_op(lvl::dark, lvl::clk, amp, atom)));
  }
}

// Schrödinger generator dU/dt = -i H U for the shelving pulse on one atom,
// valid when no decay channel is active.  Block size is dim (5 or 25).
inline SparseGenerator clock_state_generator(int dim, int atom,
                                             const CompositePulse& pulse,
                                             const ClockContext& ctx,
                                             const NoiseModel& nm) {
  SparseGenerator gen(dim);
  auto drive = clock_drive_amp(pulse, ctx, nm);
  gen.add_driven(level_op(lvl::clk, lvl::q1, 1.0, atom),
                 [drive](double t) { return -iu * drive(t); });
  gen.add_driven(level_op(lvl::q1, lvl::clk, 1.0, atom),
                 [drive](double t) { return -iu * std::conj(drive(t)); });
  if (ctx.delta_static != 0.0)
    gen.add_static(level_op(lvl::clk, lvl::clk, -iu * ctx.delta_static, atom));
  if (auto shift = clock_lightshift_mod(pulse, nm))
    gen.add_driven(level_op(lvl::clk, lvl::clk, 1.0, atom),
                   [shift](double t) { return -iu * shift(t); });
  return gen;
}

struct UvContext {
  double delta_r = 0.0;     // rad/s on |ryd⟩, common to both atoms
  double rabi_scale = 1.0;  // common amplitude factor
};

// Full Lindblad generator for the entangling pulse on the pair (block 625).
inline void add_uv_lindblad_terms(SparseGenerator& gen, const UvPulseParams& p,
                                  const UvContext& ctx, const NoiseModel& nm) {
  const int dim = lvl::pair_dim;
  const UvPulseParams pc = p;
  const double scale = 0.5 * ctx.rabi_scale;
  auto drive = [pc, scale](double t) -> cxd {
    const double om = uv_rabi_at(pc, t);
    if (om == 0.0) return cxd{};
    return scale * om * std::exp(iu * phase_profile_eval(pc, t));
  };
  for (int atom = 0; atom < 2; ++atom) {
    gen.add_driven(commutator_entries(dim, level_op(lvl::ryd, lvl::clk, 1.0, atom)),
                   drive);
    gen.add_driven(commutator_entries(dim, level_op(lvl::clk, lvl::ryd, 1.0, atom)),
                   [drive](double t) { return std::conj(drive(t)); });
    if (ctx.delta_r != 0.0)
      gen.add_static(commutator_entries(
          dim, level_op(lvl::ryd, lvl::ryd, ctx.delta_r, atom)));
    if (nm.ryd_t1.enabled && nm.ryd_t1.value > 0.0)
      gen.add_static(jump_entries(
          dim, level_op(lvl::dark, lvl::ryd, std::sqrt(1.0 / nm.ryd_t1.value), atom)));
    if (nm.atom_loss_t.enabled && nm.atom_loss_t.value > 0.0)
      gen.add_static(jump_entries(
          dim, level_op(lvl::dark, lvl::clk, std::sqrt(1.0 / nm.atom_loss_t.value), atom)));
  }
  const int rr = pair_index(lvl::ryd, lvl::ryd);
  gen.add_static(commutator_entries(dim, {{rr, rr, nm.blockade_u}}));
}

// No-jump propagator generator dT/dt = -i H_eff T on the 25-dim pair space.
// Every decay channel during this pulse ends in |dark⟩, so completing the
// propagator with projectors onto the sink reproduces the exact channel on
// the qubit subspace.
inline SparseGenerator uv_no_jump_generator(const UvPulseParams& p,
                                            const UvContext& ctx,
                                            const NoiseModel& nm) {
  SparseGenerator gen(lvl::pair_dim);
  const UvPulseParams pc = p;
  const double scale = 0.5 * ctx.rabi_scale;
  auto coupling = [pc, scale](double t) -> cxd {
    const double om = uv_rabi_at(pc, t);
    if (om == 0.0) return cxd{};
    return scale * om * std::exp(iu * phase_profile_eval(pc, t));
  };
  std::vector<Entry> stat;
  auto add = [&stat](const std::vector<Entry>& es, cxd factor) {
    for (const Entry& e : es) stat.push_back({e.r, e.c, factor * e.v});
  };
  for (int atom = 0; atom < 2; ++atom) {
    gen.add_driven(level_op(lvl::ryd, lvl::clk, 1.0, atom),
                   [coupling](double t) { return -iu * coupling(t); });
    gen.add_driven(level_op(lvl::clk, lvl::ryd, 1.0, atom),
                   [coupling](double t) { return -iu * std::conj(coupling(t)); });
    if (ctx.delta_r != 0.0)
      add(level_op(lvl::ryd, lvl::ryd, 1.0, atom), -iu * ctx.delta_r);
    if (nm.ryd_t1.enabled && nm.ryd_t1.value > 0.0)
      add(level_op(lvl::ryd, lvl::ryd, 1.0, atom), cxd{-0.5 / nm.ryd_t1.value, 0.0});
    if (nm.atom_loss_t.enabled && nm.atom_loss_t.value > 0.0)
      add(level_op(lvl::clk, lvl::clk, 1.0, atom), cxd{-0.5 / nm.atom_loss_t.value, 0.0});
  }
  const int rr = pair_index(lvl::ryd, lvl::ryd);
  stat.push_back({rr, rr, -iu * nm.blockade_u});
  if (!stat.empty()) gen.add_static(stat);
  return gen;
}

// Integrates the generator applied to an identity matrix of the given block
// size: a d²×d² superoperator propagator, or a d×d state propagator when the
// generator acts on bare kets.
inline Mat propagate_identity(const SparseGenerator& gen, int dim, double t0,
                              double t1, double rtol, double atol,
                              const std::vector<double>& breakpoints = {}) {
  Vec y = Vec::Zero(Eigen::Index(dim) * dim);
  for (int k = 0; k < dim; ++k) y(Eigen::Index(k) * dim + k) = 1.0;
  y = gen.propagate(y, t0, t1, rtol, atol, breakpoints);
  return unvec_density(y, dim);
}

// Nearest unitary in Frobenius norm, removing the integrator's truncation
// drift from a propagator known to be unitary.
inline Mat polar_unitary(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().adjoint();
}

// Sample instants of the phase trajectory, mapped into the local pulse clock;
// the interpolated phase loses smoothness there, so the integrator should
// land on them.
inline std::vector<double> trajectory_breakpoints(const ClockContext& ctx,
                                                  double duration) {
  std::vector<double> bp;
  if (!ctx.phase || ctx.phase->dt <= 0.0) return bp;
  const double dt = ctx.phase->dt;
  bp.reserve(std::size_t(duration / dt) + 2);
  for (double u = std::ceil(ctx.phase_offset / dt) * dt;
       u - ctx.phase_offset < duration; u += dt) {
    const double t = u - ctx.phase_offset;
    if (t > 0.0) bp.push_back(t);
  }
  return bp;
}

inline Channel clock_atom_channel(const CompositePulse& pulse,
                                  const ClockContext& ctx, const NoiseModel& nm) {
  const std::vector<double> bp =
      nm.clock_psd.enabled ? trajectory_breakpoints(ctx, pulse.duration())
                           : std::vector<double>{};
  if (!clock_decay_active(nm)) {
    SparseGenerator gen = clock_state_generator(lvl::atom_dim, -1, pulse, ctx, nm);
    const Mat u = propagate_identity(gen, lvl::atom_dim, 0.0, pulse.duration(),
                                     1e-10, 1e-14, bp);
    return Channel::from_unitary(polar_unitary(u));
  }
  SparseGenerator gen(lvl::atom_dim * lvl::atom_dim);
  add_clock_terms(gen, lvl::atom_dim, -1, pulse, ctx, nm);
  return Channel(propagate_identity(gen, lvl::atom_dim * lvl::atom_dim, 0.0,
                                    pulse.duration(), 1e-9, 1e-13, bp));
}

inline Channel uv_channel(const UvPulseParams& p, const UvContext& ctx,
                          const NoiseModel& nm) {
  SparseGenerator gen = uv_no_jump_generator(p, ctx, nm);
  const Mat tprop =
      propagate_identity(gen, lvl::pair_dim, 0.0, p.duration, 1e-9, 1e-13);
  if (!uv_decay_active(nm)) return Channel::from_unitary(polar_unitary(tprop));
  std::vector<Mat> kraus{tprop};
  Mat defect = Mat::Identity(lvl::pair_dim, lvl::pair_dim) - tprop.adjoint() * tprop;
  Eigen::SelfAdjointEigenSolver<Mat> es(defect);
  const int sink = pair_index(lvl::dark, lvl::dark);
  for (int k = 0; k < lvl::pair_dim; ++k) {
    const double lam = es.eigenvalues()(k);
    if (lam <= 1e-14) continue;
    Mat op = Mat::Zero(lvl::pair_dim, lvl::pair_dim);
    op.row(sink) = std::sqrt(lam) * es.eigenvectors().col(k).adjoint();
    kraus.push_back(std::move(op));
  }
  return Channel::from_kraus(kraus);
}

inline int sample_thermal_occupation(double nbar, std::mt19937_64& rng) {
  if (nbar <= 0.0) return 0;
  const double ratio = nbar / (1.0 + nbar);
  const double u = uniform_sample(rng);
  const int n = int(std::floor(std::log(u) / std::log(ratio)));
  return n < 512 ? n : 512;
}

inline double mean_debye_waller(const ThermalSource& th) {
  if (!th.enabled || th.nbar <= 0.0)
    return debye_waller_factor(0, th.enabled ? th.eta : 0.0);
  return thermal_average(
      [&th](int n) { return debye_waller_factor(n, th.eta); }, th.nbar);
}

struct GateDraws {
  double delta_static = 0.0;
  double dw1 = 1.0;
  double dw2 = 1.0;
  UvContext uv;
  std::shared_ptr<const NoiseTrajectory> phase;
};

inline double draw_static_detuning(const NoiseModel& nm, std::uint64_t seed,
                                   const char* tag) {
  if (!nm.clock_static_detuning_sigma.enabled) return 0.0;
  std::mt19937_64 rng(derive_seed(seed, tag));
  return two_pi * nm.clock_static_detuning_sigma.value * gaussian_sample(rng);
}

inline std::pair<double, double> draw_motional_scales(const NoiseModel& nm,
                                                      std::uint64_t seed,
                                                      const char* tag) {
  if (!nm.thermal.enabled) return {1.0, 1.0};
  std::mt19937_64 rng(derive_seed(seed, tag));
  const double norm = mean_debye_waller(nm.thermal);
  const int n1 = sample_thermal_occupation(nm.thermal.nbar, rng);
  const int n2 = sample_thermal_occupation(nm.thermal.nbar, rng);
  return {debye_waller_factor(n1, nm.thermal.eta) / norm,
          debye_waller_factor(n2, nm.thermal.eta) / norm};
}

inline UvContext draw_uv_context(const NoiseModel& nm, std::uint64_t seed) {
  UvContext ctx;
  if (nm.ryd_t2star.enabled && nm.ryd_t2star.value > 0.0) {
    std::mt19937_64 rng(derive_seed(seed, "uv.t2star"));
    ctx.delta_r = gaussian_sample(rng) / nm.ryd_t2star.value;
  }
  if (nm.uv_area_jitter_rms.enabled) {
    std::mt19937_64 rng(derive_seed(seed, "uv.jitter"));
    ctx.rabi_scale = 1.0 + nm.uv_area_jitter_rms.value * gaussian_sample(rng);
  }
  return ctx;
}

inline std::shared_ptr<const NoiseTrajectory> draw_phase_trajectory(
    const NoiseModel& nm, double duration, std::uint64_t seed, const char* tag,
    double dt = 1e-6) {
  if (!nm.clock_psd.enabled || nm.clock_psd.table.size() == 0) return nullptr;
  return std::make_shared<const NoiseTrajectory>(
      sample_phase_noise(nm.clock_psd.table, duration, dt, derive_seed(seed, tag)));
}

// True when any per-seed draw changes the gate; a model without one needs a
// single evaluation.
inline bool model_has_random_draws(const NoiseModel& nm) {
  return nm.clock_static_detuning_sigma.enabled ||
         (nm.clock_psd.enabled && nm.clock_psd.table.size() > 0) ||
         (nm.thermal.enabled && nm.thermal.nbar > 0.0) ||
         (nm.ryd_t2star.enabled && nm.ryd_t2star.value > 0.0) ||
         (nm.uv_area_jitter_rms.enabled && nm.uv_area_jitter_rms.value > 0.0);
}

inline GateDraws draw_gate_noise(const NoiseModel& nm, const CzGateParams& p,
                                 std::uint64_t seed) {
  GateDraws d;
  d.delta_static = draw_static_detuning(nm, seed, "cz.detuning");
  std::tie(d.dw1, d.dw2) = draw_motional_scales(nm, seed, "cz.thermal");
  d.uv = draw_uv_context(nm, seed);
  const double span = 2.0 * pi / (blackman_mean * p.clock_peak_rabi) * 2.0;
  d.phase = draw_phase_trajectory(nm, span + p.uv.duration, seed, "cz.phase");
  return d;
}

}  // namespace detail

// Depolarizing Kraus set for the driven single-qubit π/2 gate about the
// equatorial axis at the given phase, embedded in the 5-level space.  The
// per-gate average infidelity err maps to a uniform Pauli error probability
// p = 2 err.
inline std::vector<Mat> xhalf_kraus(const NoiseModel& nm, double phase = 0.0) {
  const Mat axis =
      std::cos(phase) * pauli_x() + std::sin(phase) * pauli_y();
  const Mat u = embed_qubit_op(
      (std::cos(pi / 4.0) * Mat::Identity(2, 2) - iu * std::sin(pi / 4.0) * axis)
          .eval());
  const double p =
      nm.oneq_error_per_gate.enabled ? 2.0 * nm.oneq_error_per_gate.value : 0.0;
  if (p <= 0.0) return {u};
  std::vector<Mat> out;
  out.push_back(std::sqrt(1.0 - 0.75 * p) * u);
  out.push_back(std::sqrt(0.25 * p) * embed_qubit_op(pauli_x()) * u);
  out.push_back(std::sqrt(0.25 * p) * embed_qubit_op(pauli_y()) * u);
  out.push_back(std::sqrt(0.25 * p) * embed_qubit_op(pauli_z()) * u);
  return out;
}

inline Channel xhalf_channel(double phase, const NoiseModel& nm) {
  return Channel::from_kraus(xhalf_kraus(nm, phase));
}

// One composite shelving pulse on a single atom with a fresh noise draw.
inline Channel clock_pi_channel(const NoiseModel& nm, std::uint64_t seed) {
  const CompositePulse pulse = build_yxy(nm.omega_clk);
  detail::ClockContext ctx;
  ctx.delta_static = detail::draw_static_detuning(nm, seed, "clk.detuning");
  if (nm.thermal.enabled) {
    std::mt19937_64 rng(derive_seed(seed, "clk.thermal"));
    ctx.dw_scale = debye_waller_factor(
                       detail::sample_thermal_occupation(nm.thermal.nbar, rng),
                       nm.thermal.eta) /
                   detail::mean_debye_waller(nm.thermal);
  }
  ctx.phase =
      detail::draw_phase_trajectory(nm, pulse.duration(), seed, "clk.phase");
  return detail::clock_atom_channel(pulse, ctx, nm);
}

// The entangling pulse alone, as a channel on the pair space.
inline Channel cz_pulse_channel(const UvPulseParams& p, const NoiseModel& nm,
                                std::uint64_t seed) {
  if (!(p.duration > 0.0))
    throw UncalibratedGate("entangling pulse duration is unset");
  return detail::uv_channel(p, detail::draw_uv_context(nm, seed), nm);
}

namespace detail {

struct GateStepChannels {
  Channel shelve;
  Channel mid;
  Channel unshelve;
};

inline GateStepChannels build_gate_steps(const CzGateParams& gp,
                                         const NoiseModel& nm,
                                         std::uint64_t seed) {
  if (!(gp.clock_peak_rabi > 0.0) || !(gp.uv.duration > 0.0))
    throw UncalibratedGate("gate parameters are unset; run calibration first");
  const GateDraws d = draw_gate_noise(nm, gp, seed);
  const CompositePulse pulse = build_yxy(gp.clock_peak_rabi);

  ClockContext c1{d.delta_static, d.dw1, d.phase, 0.0};
  ClockContext c2{d.delta_static, d.dw2, d.phase, 0.0};
  Channel shelve = clock_atom_channel(pulse, c1, nm)
                       .tensor_with(clock_atom_channel(pulse, c2, nm));

  Channel mid = uv_channel(gp.uv, d.uv, nm);

  const double back = pulse.duration() + gp.uv.duration;
  ClockContext u1{d.delta_static, d.dw1, d.phase, back};
  ClockContext u2{d.delta_static, d.dw2, d.phase, back};
  Channel unshelve = (d.phase == nullptr)
                         ? shelve
                         : clock_atom_channel(pulse, u1, nm)
                               .tensor_with(clock_atom_channel(pulse, u2, nm));
  return {std::move(shelve), std::move(mid), std::move(unshelve)};
}

}  // namespace detail

// Raw process data for one noisy realization of the full gate: the 16x16
// qubit-subspace process tensor (no frame correction applied) and the mean
// population leaving the qubit subspace over computational inputs.
struct QubitBlockResult {
  QubitProcessTensor tensor = QubitProcessTensor::Zero();
  double leakage = 0.0;
};

inline QubitBlockResult full_cz_qubit_block(const CzGateParams& gp,
                                            const NoiseModel& nm,
                                            std::uint64_t seed) {
  const detail::GateStepChannels steps = detail::build_gate_steps(gp, nm, seed);
  const int dim = lvl::pair_dim;
  Mat cols = Mat::Zero(Eigen::Index(dim) * dim, 16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      cols(Eigen::Index(qubit_pair_basis[j]) * dim + qubit_pair_basis[i],
           4 * j + i) = 1.0;
  cols = steps.shelve.superop() * cols;
  cols = steps.mid.superop() * cols;
  cols = steps.unshelve.superop() * cols;

  QubitBlockResult out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          out.tensor(a + 4 * i, b + 4 * j) =
              cols(Eigen::Index(qubit_pair_basis[b]) * dim + qubit_pair_basis[a],
                   4 * j + i);
  double kept = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k)
      kept += cols(Eigen::Index(qubit_pair_basis[k]) * dim + qubit_pair_basis[k],
                   4 * i + i)
                  .real();
  out.leakage = 1.0 - kept / 4.0;
  return out;
}

namespace detail {

// Single-qubit frame angles that align the noiseless gate with the target;
// measured once per parameter point and reused.
inline std::array<double, 2> reference_vz_angles(const CzGateParams& gp,
                                                 double blockade_u) {
  using Key = std::array<double, 9>;
  static std::map<Key, std::array<double, 2>> cache;
  static std::mutex guard;
  const Key key{gp.clock_peak_rabi, gp.uv.duration,  gp.uv.rabi,
                gp.uv.amp,          gp.uv.freq,      gp.uv.phase0,
                gp.uv.detuning,     gp.uv.rise_time, blockade_u};
  {
    std::lock_guard<std::mutex> lock(guard);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  NoiseModel off = NoiseModel::noiseless();
  off.blockade_u = blockade_u;
  const QubitBlockResult blk = full_cz_qubit_block(gp, off, 0);
  const FidelityResult fr = avg_gate_fidelity(blk.tensor, ideal_cz(), true);
  const std::array<double, 2> angles{fr.virtual_z[0], fr.virtual_z[1]};
  std::lock_guard<std::mutex> lock(guard);
  cache.emplace(key, angles);
  return angles;
}

inline Channel pair_virtual_z(double theta_a, double theta_b) {
  Mat z = Mat::Identity(lvl::pair_dim, lvl::pair_dim);
  for (int a = 0; a < lvl::atom_dim; ++a)
    for (int b = 0; b < lvl::atom_dim; ++b) {
      cxd f{1.0, 0.0};
      if (a == lvl::q1) f *= std::exp(iu * theta_a);
      if (b == lvl::q1) f *= std::exp(iu * theta_b);
      z(pair_index(a, b), pair_index(a, b)) = f;
    }
  return Channel::from_unitary(z);
}

}  // namespace detail

// Full three-step gate: shelve both atoms, run the entangling pulse, unshelve,
// then correct single-qubit phases with the virtual-Z angles measured on the
// noiseless reference.  Quasi-static draws are shared across the three steps
// and the laser phase trajectory spans the whole sequence.
inline Channel full_cz_channel(const CzGateParams& gp, const NoiseModel& nm,
                               std::uint64_t seed) {
  const detail::GateStepChannels steps = detail::build_gate_steps(gp, nm, seed);
  const std::array<double, 2> vz =
      detail::reference_vz_angles(gp, nm.blockade_u);
  return steps.shelve.then(steps.mid).then(steps.unshelve).then(
      detail::pair_virtual_z(vz[0], vz[1]));
}

inline Channel full_cz_channel(const NoiseModel& nm, std::uint64_t seed) {
  return full_cz_channel(default_cz_params(), nm, seed);
}

// Amplitudes of the driven sectors of the entangling pulse with all decay
// switched off.  The 01 sector couples |clk⟩ to |ryd⟩ at the bare Rabi rate;
// the 11 sector runs through the symmetric doubly-excited ladder with the
// blockade shift on |rr⟩.
struct UvSectorAmplitudes {
  cxd c01;            // ⟨clk|U|clk⟩ for one shelved atom
  cxd c11;            // ⟨cc|U|cc⟩ for both shelved
  double f_pro;       // process fidelity to CZ after the optimal phase frame
  double theta;       // maximizing single-atom phase, radians
  double ent_phase;   // arg(c11) - 2 arg(c01), wrapped to (-pi, pi]
};

inline UvSectorAmplitudes uv_sector_amplitudes(const UvPulseParams& p,
                                               double blockade_u,
                                               double delta_r = 0.0,
                                               double rabi_scale = 1.0,
                                               double rtol = 1e-11) {
  const UvPulseParams pc = p;
  const double scale = 0.5 * rabi_scale;
  auto g = [pc, scale](double t) -> cxd {
    const double om = uv_rabi_at(pc, t);
    if (om == 0.0) return cxd{};
    return scale * om * std::exp(iu * phase_profile_eval(pc, t));
  };

  Vec y01(2);
  y01 << 1.0, 0.0;
  auto rhs01 = [&g, delta_r](double t, const Vec& y, Vec& dy) {
    const cxd gt = g(t);
    dy(0) = -iu * std::conj(gt) * y(1);
    dy(1) = -iu * (gt * y(0) + delta_r * y(1));
  };
  y01 = integrate_adaptive(rhs01, y01, 0.0, p.duration, rtol, 1e-14);

  const double root2 = std::sqrt(2.0);
  Vec y11(3);
  y11 << 1.0, 0.0, 0.0;
  auto rhs11 = [&g, delta_r, blockade_u, root2](double t, const Vec& y, Vec& dy) {
    const cxd gt = g(t);
    dy(0) = -iu * root2 * std::conj(gt) * y(1);
    dy(1) = -iu * (root2 * gt * y(0) + delta_r * y(1) + root2 * std::conj(gt) * y(2));
    dy(2) = -iu * (root2 * gt * y(1) + (blockade_u + 2.0 * delta_r) * y(2));
  };
  y11 = integrate_adaptive(rhs11, y11, 0.0, p.duration, rtol, 1e-14);

  UvSectorAmplitudes out;
  out.c01 = y01(0);
  out.c11 = y11(0);
  auto overlap = [&out](double th) {
    const cxd z = std::exp(iu * th);
    return std::norm(1.0 + 2.0 * out.c01 * z - out.c11 * z * z) / 16.0;
  };
  double best_th = 0.0, best = overlap(0.0);
  const int grid = 512;
  for (int k = 1; k < grid; ++k) {
    const double th = two_pi * k / grid - pi;
    const double v = overlap(th);
    if (v > best) {
      best = v;
      best_th = th;
    }
  }
  const double w = two_pi / grid;
  best_th = golden_max(overlap, best_th - w, best_th + w);
  out.theta = detail::wrap_angle(best_th);
  out.f_pro = overlap(best_th);
  out.ent_phase =
      detail::wrap_angle(std::arg(out.c11) - 2.0 * std::arg(out.c01));
  return out;
}

// Applies gates shot by shot for randomized-circuit runs.  Quasi-static noise
// is drawn once per shot and held; the laser phase trajectory is drawn fresh
// for every gate.
class CzGateExecutor {
 public:
  CzGateExecutor(CzGateParams params, NoiseModel noise)
      : p_(std::move(params)),
        nm_(std::move(noise)),
        pulse_(build_yxy(require_calibrated(p_))),
        xk_(xhalf_kraus(nm_)) {}

  struct ShotState {
    double delta_static = 0.0;
    double dw1 = 1.0;
    double dw2 = 1.0;
    detail::UvContext uv;
    Channel uv_step = Channel::identity(lvl::pair_dim);
    Channel clock_pair = Channel::identity(lvl::pair_dim);
    bool clock_cached = false;
  };

  ShotState prepare_shot(std::uint64_t seed) const {
    ShotState st;
    st.delta_static = detail::draw_static_detuning(nm_, seed, "shot.detuning");
    std::tie(st.dw1, st.dw2) = detail::draw_motional_scales(nm_, seed, "shot.thermal");
    st.uv = detail::draw_uv_context(nm_, seed);
    st.uv_step = detail::uv_channel(p_.uv, st.uv, nm_);
    if (!nm_.clock_psd.enabled || nm_.clock_psd.table.size() == 0) {
      detail::ClockContext c1{st.delta_static, st.dw1, nullptr, 0.0};
      detail::ClockContext c2{st.delta_static, st.dw2, nullptr, 0.0};
      st.clock_pair = detail::clock_atom_channel(pulse_, c1, nm_)
                          .tensor_with(detail::clock_atom_channel(pulse_, c2, nm_));
      st.clock_cached = true;
    }
    return st;
  }

  // One full gate on the pair state; gate_seed feeds the per-gate laser phase
  // trajectory.
  void apply_cz(Mat& rho, const ShotState& st, std::uint64_t gate_seed) const {
    if (st.clock_cached) {
      rho = st.clock_pair.apply(rho);
      rho = st.uv_step.apply(rho);
      rho = st.clock_pair.apply(rho);
      return;
    }
    const double span = 2.0 * pulse_.duration() + p_.uv.duration;
    auto traj = detail::draw_phase_trajectory(nm_, span, gate_seed, "gate.phase");
    propagate_clock_pair(rho, traj, 0.0, st);
    rho = st.uv_step.apply(rho);
    propagate_clock_pair(rho, traj, pulse_.duration() + p_.uv.duration, st);
  }

  // One composite shelving pulse on both atoms, sharing the shot's
  // quasi-static draws, with a fresh laser-phase trajectory.
  void apply_clock_pi(Mat& rho, const ShotState& st,
                      std::uint64_t gate_seed) const {
    if (st.clock_cached) {
      rho = st.clock_pair.apply(rho);
      return;
    }
    auto traj =
        detail::draw_phase_trajectory(nm_, pulse_.duration(), gate_seed, "gate.phase");
    propagate_clock_pair(rho, traj, 0.0, st);
  }

  void apply_xhalf(Mat& rho, int atom, double phase = 0.0) const {
    const std::vector<Mat>& ks = phase == 0.0 ? xk_ : scratch_kraus(phase);
    Mat out = Mat::Zero(lvl::pair_dim, lvl::pair_dim);
    for (const Mat& k : ks) {
      const Mat lifted = op_on_atom(k, atom);
      out += lifted * rho * lifted.adjoint();
    }
    rho = std::move(out);
  }

  void apply_virtual_z(Mat& rho, int atom, double theta) const {
    const cxd z = std::exp(iu * theta);
    for (int r = 0; r < lvl::pair_dim; ++r)
      for (int c = 0; c < lvl::pair_dim; ++c) {
        const int lr = atom == 0 ? r / lvl::atom_dim : r % lvl::atom_dim;
        const int lc = atom == 0 ? c / lvl::atom_dim : c % lvl::atom_dim;
        cxd f{1.0, 0.0};
        if (lr == lvl::q1) f *= z;
        if (lc == lvl::q1) f *= std::conj(z);
        rho(r, c) *= f;
      }
  }

  const CzGateParams& params() const { return p_; }
  const NoiseModel& noise() const { return nm_; }

 private:
  static double require_calibrated(const CzGateParams& p) {
    if (!(p.clock_peak_rabi > 0.0) || !(p.uv.duration > 0.0))
      throw UncalibratedGate("gate parameters are unset; run calibration first");
    return p.clock_peak_rabi;
  }

  const std::vector<Mat>& scratch_kraus(double phase) const {
    auto it = phase_kraus_.find(phase);
    if (it == phase_kraus_.end())
      it = phase_kraus_.emplace(phase, xhalf_kraus(nm_, phase)).first;
    return it->second;
  }

  void propagate_clock_pair(Mat& rho,
                            const std::shared_ptr<const NoiseTrajectory>& traj,
                            double offset, const ShotState& st) const {
    SparseGenerator gen(lvl::pair_dim * lvl::pair_dim);
    detail::ClockContext c1{st.delta_static, st.dw1, traj, offset};
    detail::ClockContext c2{st.delta_static, st.dw2, traj, offset};
    detail::add_clock_terms(gen, lvl::pair_dim, 0, pulse_, c1, nm_);
    detail::add_clock_terms(gen, lvl::pair_dim, 1, pulse_, c2, nm_);
    const std::vector<double> bp =
        nm_.clock_psd.enabled
            ? detail::trajectory_breakpoints(c1, pulse_.duration())
            : std::vector<double>{};
    Vec y = vec_density(rho);
    y = gen.propagate(y, 0.0, pulse_.duration(), 1e-8, 1e-12, bp);
    rho = unvec_density(y, lvl::pair_dim);
  }

  CzGateParams p_;
  NoiseModel nm_;
  CompositePulse pulse_;
  std::vector<Mat> xk_;
  mutable std::map<double, std::vector<Mat>> phase_kraus_;
};

}  // namespace gatekit

#endif  // GATEKIT_GATES_HPP
