// SPDX-License-Identifier: Apache-2.0
#ifndef GATEKIT_BUDGET_HPP
#define GATEKIT_BUDGET_HPP

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "gatekit/gates.hpp"

namespace gatekit {

// One line of the error budget: the average-gate infidelity of the full gate
// with a single error source active, and the part of it that is population
// outside the qubit subspace.
struct BudgetEntry {
  std::string source;
  double infidelity = 0.0;
  double leakage_loss = 0.0;
  int n_seeds = 0;
  double sem = 0.0;
  bool statistics_limited = false;
};

struct BudgetReport {
  std::vector<BudgetEntry> entries;
  BudgetEntry totals;
};

namespace detail {

struct BudgetRow {
  const char* source;  // NoiseModel field name, also the report row name
};

// Report row order: the six shelving-step sources, then the three
// entangling-step sources.
inline const std::array<BudgetRow, 9>& budget_rows() {
  static const std::array<BudgetRow, 9> rows{{
      {"clock_static_detuning_sigma"},
      {"clock_psd"},
      {"thermal"},
      {"clock_t1_trap_scatter"},
      {"atom_loss_t"},
      {"clock_lightshift_mean"},
      {"ryd_t1"},
      {"ryd_t2star"},
      {"uv_area_jitter_rms"},
  }};
  return rows;
}

inline void disable_all_sources(NoiseModel& nm) {
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
}

// The passed model with every source switched off except the named one, which
// keeps the enabled flag it had (so a source the caller disabled stays off).
inline NoiseModel isolate_source(const NoiseModel& defaults,
                                 const std::string& source) {
  NoiseModel iso = defaults;
  disable_all_sources(iso);
  if (source == "clock_static_detuning_sigma")
    iso.clock_static_detuning_sigma.enabled =
        defaults.clock_static_detuning_sigma.enabled;
  else if (source == "clock_psd")
    iso.clock_psd.enabled = defaults.clock_psd.enabled;
  else if (source == "thermal")
    iso.thermal.enabled = defaults.thermal.enabled;
  else if (source == "clock_t1_trap_scatter")
    iso.clock_t1_trap_scatter.enabled = defaults.clock_t1_trap_scatter.enabled;
  else if (source == "atom_loss_t")
    iso.atom_loss_t.enabled = defaults.atom_loss_t.enabled;
  else if (source == "clock_lightshift_mean")
    iso.clock_lightshift_mean.enabled = defaults.clock_lightshift_mean.enabled;
  else if (source == "ryd_t1")
    iso.ryd_t1.enabled = defaults.ryd_t1.enabled;
  else if (source == "ryd_t2star")
    iso.ryd_t2star.enabled = defaults.ryd_t2star.enabled;
  else if (source == "uv_area_jitter_rms")
    iso.uv_area_jitter_rms.enabled = defaults.uv_area_jitter_rms.enabled;
  else
    throw OutOfRange(fmt::format("unknown noise source '{}'", source));
  return iso;
}

// The motional draw is a small discrete set, so gate blocks can be reused
// across seeds whenever it is the only random input.
inline bool only_thermal_randomness(const NoiseModel& nm) {
  return nm.thermal.enabled && nm.thermal.nbar > 0.0 &&
         !nm.clock_static_detuning_sigma.enabled &&
         !(nm.clock_psd.enabled && nm.clock_psd.table.size() > 0) &&
         !(nm.ryd_t2star.enabled && nm.ryd_t2star.value > 0.0) &&
         !(nm.uv_area_jitter_rms.enabled && nm.uv_area_jitter_rms.value > 0.0);
}

struct BudgetBatch {
  QubitProcessTensor tensor = QubitProcessTensor::Zero();
  double leak = 0.0;
  int count = 0;
};

inline double infidelity_of(const QubitProcessTensor& mean_tensor, double leak) {
  const FidelityResult fr = avg_gate_fidelity(mean_tensor, ideal_cz(), true);
  return (4.0 * (1.0 - fr.f_pro) + leak) / 5.0;
}

// Seed-averaged gate block for one noise model.  Seeds are split into a fixed
// number of batches both for the worker fan-out and for the batch-means error
// bar, so results are byte-identical for any job count.
inline BudgetEntry evaluate_budget_entry(const std::string& source,
                                         const CzGateParams& gp,
                                         const NoiseModel& nm, int n_seeds,
                                         std::uint64_t base_seed,
                                         const std::string& seed_tag,
                                         int n_jobs) {
  const bool random = model_has_random_draws(nm);
  const int n_run = random ? n_seeds : 1;
  const int n_batches = n_run >= 10 ? 10 : 1;
  const bool memoize = only_thermal_randomness(nm);

  std::map<std::pair<double, double>, QubitBlockResult> memo;
  std::mutex memo_guard;
  auto block_for = [&](std::uint64_t seed) -> QubitBlockResult {
    if (!memoize) return full_cz_qubit_block(gp, nm, seed);
    const auto dw = draw_motional_scales(nm, seed, "cz.thermal");
    {
      std::lock_guard<std::mutex> lock(memo_guard);
      auto it = memo.find(dw);
      if (it != memo.end()) return it->second;
    }
    QubitBlockResult blk = full_cz_qubit_block(gp, nm, seed);
    std::lock_guard<std::mutex> lock(memo_guard);
    return memo.emplace(dw, std::move(blk)).first->second;
  };

  std::vector<BudgetBatch> batches(static_cast<std::size_t>(n_batches));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int b = next.fetch_add(1); b < n_batches; b = next.fetch_add(1)) {
      BudgetBatch& acc = batches[std::size_t(b)];
      const int lo = b * n_run / n_batches;
      const int hi = (b + 1) * n_run / n_batches;
      for (int k = lo; k < hi; ++k) {
        const QubitBlockResult blk =
            block_for(derive_seed(base_seed, seed_tag.c_str(), std::uint64_t(k)));
        acc.tensor += blk.tensor;
        acc.leak += blk.leakage;
        ++acc.count;
      }
    }
  };
  const int jobs = std::max(1, std::min(n_jobs, n_batches));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(jobs));
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  QubitProcessTensor total = QubitProcessTensor::Zero();
  double leak = 0.0;
  for (const BudgetBatch& b : batches) {
    total += b.tensor;
    leak += b.leak;
  }
  total /= double(n_run);
  leak /= double(n_run);

  BudgetEntry e;
  e.source = source;
  e.n_seeds = n_run;
  e.leakage_loss = leak;
  e.infidelity = infidelity_of(total, leak);
  if (n_batches > 1) {
    double mean = 0.0;
    std::vector<double> vals;
    vals.reserve(std::size_t(n_batches));
    for (const BudgetBatch& b : batches) {
      const QubitProcessTensor t = b.tensor / double(b.count);
      vals.push_back(infidelity_of(t, b.leak / double(b.count)));
      mean += vals.back();
    }
    mean /= double(n_batches);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    e.sem = std::sqrt(var / double(n_batches * (n_batches - 1)));
  }
  e.statistics_limited = e.infidelity < 1e-5;
  return e;
}

}  // namespace detail

struct BudgetOptions {
  int n_seeds = 2000;
  std::uint64_t base_seed = 0;
  int n_jobs = 1;
  // The motional row is dominated by rare two-phonon draws, so it gets extra
  // seeds; block reuse over the discrete draw set keeps this cheap.
  int thermal_min_seeds = 20000;
  CzGateParams gate = default_cz_params();
};

inline BudgetReport run_budget(const NoiseModel& defaults,
                               const BudgetOptions& opt) {
  if (opt.n_seeds < 100)
    throw OutOfRange("error budget needs at least 100 seeds per entry");
  BudgetReport rep;
  for (const detail::BudgetRow& row : detail::budget_rows()) {
    const NoiseModel iso = detail::isolate_source(defaults, row.source);
    int n = opt.n_seeds;
    if (detail::only_thermal_randomness(iso))
      n = std::max(n, opt.thermal_min_seeds);
    rep.entries.push_back(detail::evaluate_budget_entry(
        row.source, opt.gate, iso, n, opt.base_seed,
        fmt::format("budget.{}", row.source), opt.n_jobs));
  }
  rep.totals = detail::evaluate_budget_entry("totals", opt.gate, defaults,
                                             opt.n_seeds, opt.base_seed,
                                             "budget.totals", opt.n_jobs);
  return rep;
}

inline BudgetReport run_budget(const NoiseModel& defaults, int n_seeds,
                               std::uint64_t base_seed) {
  BudgetOptions opt;
  opt.n_seeds = n_seeds;
  opt.base_seed = base_seed;
  return run_budget(defaults, opt);
}

// Quadratic sensitivity of the entangling pulse to a static Rydberg detuning:
// the coefficient c in infidelity = c·(Δ/Ω_rabi)² for angular detuning Δ,
// with the pulse's own residual infidelity subtracted.  The single-qubit
// phase frame stays fixed at its Δ = 0 calibration, so the detuning-induced
// phase excursion counts as error, and leftover Rydberg population counts as
// leakage.
inline double static_detuning_coefficient(const UvPulseParams& pulse,
                                          double blockade_u = two_pi * 160e6) {
  if (!(pulse.duration > 0.0) || !(pulse.rabi > 0.0))
    throw UncalibratedGate("entangling pulse is unset; run calibration first");
  const cxd z0 = std::exp(iu * uv_sector_amplitudes(pulse, blockade_u).theta);
  auto infid = [&](double frac) {
    const UvSectorAmplitudes amp =
        uv_sector_amplitudes(pulse, blockade_u, frac * pulse.rabi);
    const double f_fixed =
        std::norm(1.0 + 2.0 * z0 * amp.c01 - z0 * z0 * amp.c11) / 16.0;
    const double leak = (2.0 * (1.0 - std::norm(amp.c01)) +
                         (1.0 - std::norm(amp.c11))) / 4.0;
    return (4.0 * (1.0 - f_fixed) + leak) / 5.0;
  };
  const double y0 = infid(0.0);
  double sxx = 0.0;
  double sxy = 0.0;
  for (double frac : {-0.006, -0.004, -0.002, 0.002, 0.004, 0.006}) {
    const double x = frac * frac;
    const double y = infid(frac) - y0;
    sxx += x * x;
    sxy += x * y;
  }
  return sxy / sxx;
}

// Provenance stamped at the top of every emitted file.
struct ReportStamp {
  std::string config_hash = "none";
  std::uint64_t base_seed = 0;
};

// Writes the columnar table and a structured summary carrying the same
// numbers; returns the paths written.
inline std::vector<std::filesystem::path> emit_report(
    const BudgetReport& rep, const std::filesystem::path& dir,
    const ReportStamp& stamp = {}) {
  if (rep.entries.empty()) throw OutOfRange("budget report has no entries");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  auto row_text = [](const BudgetEntry& e) {
    return fmt::format("{:<28} {:>12.6f} {:>14.6f} {:>12.6f} {:>8}{}\n",
                       e.source, 1e2 * e.infidelity, 1e2 * e.leakage_loss,
                       1e2 * e.sem, e.n_seeds,
                       e.statistics_limited ? "  *" : "");
  };

  const std::filesystem::path table_path = dir / "budget_table.txt";
  std::ofstream table(table_path);
  if (!table) throw IoFailure("cannot write " + table_path.string());
  table << fmt::format("# config {}  seed {}\n", stamp.config_hash,
                       stamp.base_seed);
  table << fmt::format("# {:<26} {:>12} {:>14} {:>12} {:>8}\n", "source",
                       "infid_pct", "leak_loss_pct", "sem_pct", "seeds");
  for (const BudgetEntry& e : rep.entries) table << row_text(e);
  table << row_text(rep.totals);
  table << "# * statistics-limited entry (infidelity below 1e-5)\n";
  table.flush();
  if (!table) throw IoFailure("failed writing " + table_path.string());

  nlohmann::json js;
  js["config"] = stamp.config_hash;
  js["seed"] = stamp.base_seed;
  auto entry_json = [](const BudgetEntry& e) {
    nlohmann::json j;
    j["source"] = e.source;
    j["infidelity"] = e.infidelity;
    j["leakage_loss"] = e.leakage_loss;
    j["n_seeds"] = e.n_seeds;
    j["sem"] = e.sem;
    j["statistics_limited"] = e.statistics_limited;
    return j;
  };
  js["entries"] = nlohmann::json::array();
  for (const BudgetEntry& e : rep.entries) js["entries"].push_back(entry_json(e));
  js["totals"] = entry_json(rep.totals);

  const std::filesystem::path summary_path = dir / "budget_summary.json";
  std::ofstream summary(summary_path);
  if (!summary) throw IoFailure("cannot write " + summary_path.string());
  summary << js.dump(2) << "\n";
  summary.flush();
  if (!summary) throw IoFailure("failed writing " + summary_path.string());
  return {table_path, summary_path};
}

}  // namespace gatekit

#endif  // GATEKIT_BUDGET_HPP
