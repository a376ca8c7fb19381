#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfg/analysis.hpp"
#include "mfg/config.hpp"
#include "mfg/io.hpp"
#include "mfg/multiscale.hpp"

namespace mfg {

/// One CLI invocation. `out_dir` empty means nothing is written.
struct RunContext {
  ExperimentConfig cfg;
  std::string out_dir;
  int threads = 1;
  unsigned seed = 1;
};

/// Per-level facts that do not depend on wall time.
struct LevelSummary {
  int level = 0;
  int n = 0, nt = 0;
  std::string solver;
  int iterations = 0;  // sweeps, or Newton steps on a Newton level
  bool converged = false;
  double final_error = 0.0;
  double inner_avg = 0.0;  // HJB inner iterations per time step over all sweeps of the level
  double residual_F = 0.0, residual_G = 0.0;
  double max_mass_dev = 0.0;  // max_n |h^d sum_i m_i^n - 1|
  double interpolation_seconds = 0.0, solve_seconds = 0.0;
};

LevelSummary summarize(const LevelReport& rep, const FieldSeries& M);
double max_mass_deviation(const FieldSeries& M);

struct SolveOutcome {
  MultiscaleResult result;
  std::vector<LevelSummary> levels;
};

/// Multiscale (or single-level) solve. Writes fields_{u,m}_L*.csv (or .bin),
/// sweep_log_L*.csv, levels.csv and timings.csv. MultiscaleError propagates.
SolveOutcome run_solve(const RunContext& ctx);

struct OrderStudyOutcome {
  struct PerOrder {
    SchemeOrder order = SchemeOrder::Second;
    std::vector<OrderRow> rows;        // levels L0..L against the reference
    std::vector<LevelSummary> levels;  // every solved level, reference included
  };
  std::vector<PerOrder> orders;
  int reference_level = 0;
};

/// One multiscale run per study order from L0 to the reference level; the
/// levels L0..L are compared against it. Writes order_table.csv and
/// levels_<order>.csv.
OrderStudyOutcome run_order_study(const RunContext& ctx);

struct NewtonCompareRow {
  int level = 0, n = 0;
  bool newton_converged = false, sweep_converged = false;
  int newton_iterations = 0, sweep_iterations = 0;
  double newton_seconds = 0.0, sweep_seconds = 0.0;
  double newton_res_F = 0.0, newton_res_G = 0.0, sweep_res_F = 0.0, sweep_res_G = 0.0;
  double ratio() const { return newton_seconds / sweep_seconds; }
};

/// Single-level Newton against single-level alternating sweeping from the
/// naive guess for each of study.compare_levels. Writes newton_compare.csv.
std::vector<NewtonCompareRow> run_compare_newton(const RunContext& ctx);

/// Manufactured-solution truncation study on study.truncation_levels for
/// every study order. Writes truncation.csv.
std::vector<TruncationStudy> run_truncation_study(const RunContext& ctx);

struct SpectraOutcome {
  int level = 0;
  std::size_t unknowns = 0;
  double rho = 0.0;
  std::complex<double> lambda_max;
  double bound = 0.0;                  // 2 / (1 + rho)
  std::optional<double> alpha1_rate;   // empirical err_M contraction at alpha = 1
  bool alpha1_converged = false;
  bool relaxed_converged = false;      // alpha = min(1, 0.9 bound)
  int relaxed_iterations = 0;
  double commute_gap = 0.0;            // |rho(AB) - rho(BA)| for the two sweep factors
};

/// Jacobian blocks at the converged solution of study.spectra_level, the
/// sweep spectrum, the relaxation bound and both sweeps. Writes spectra.csv.
SpectraOutcome run_spectra(const RunContext& ctx);

/// Solve as run_solve, then per-frame mass of the finest M. Writes mass_audit.csv.
std::vector<LevelSummary> run_mass_audit(const RunContext& ctx);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Invariant suite on the configured problem at a small level: KFP mass
/// conservation, the discrete adjoint identity with zero column sums, and
/// rho(AB) = rho(BA) on random pairs seeded by ctx.seed.
std::vector<CheckResult> run_self_test(const RunContext& ctx);

}  // namespace mfg
