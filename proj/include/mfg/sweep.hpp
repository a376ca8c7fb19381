#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/marchers.hpp"

namespace mfg {

/// Relaxation schedule: alpha_k = min(1, alpha0 * growth^k), replaced by
/// alpha_late (when set) for good once max(err_U, err_M) < late_factor * eps. The
/// divergence guard halves alpha (down to alpha_floor) after `guard_window`
/// consecutive increases of the error.
struct RelaxSchedule {
  double alpha0 = 1.0;
  double growth = 1.0;
  std::optional<double> alpha_late;
  double late_factor = 5.0;
  bool guard = true;
  int guard_window = 5;
  double alpha_floor = 1e-3;

  static RelaxSchedule constant(double alpha) {
    RelaxSchedule s;
    s.alpha0 = alpha;
    return s;
  }

  void validate() const {
    if (!(alpha0 > 0.0 && alpha0 <= 1.0)) throw std::invalid_argument("alpha0 must lie in (0, 1]");
    if (!(growth >= 1.0)) throw std::invalid_argument("alpha growth must be >= 1");
    if (alpha_late && !(*alpha_late > 0.0 && *alpha_late <= 1.0)) throw std::invalid_argument("alpha_late must lie in (0, 1]");
    if (!(alpha_floor > 0.0 && alpha_floor <= 1.0)) throw std::invalid_argument("alpha_floor must lie in (0, 1]");
  }
};

struct SweepOptions {
  double eps = 1e-6;
  int max_iters = 200;
  RelaxSchedule schedule;
  bool track_residuals = true;
};

struct SweepReport {
  std::vector<double> err_U, err_M, res_F, res_G, alpha, elapsed, inner_avg;
  bool converged = false;
  bool aborted = false;  // non-finite state or a failed march
  std::string message;
  int best_iteration = -1;

  int iterations() const { return static_cast<int>(err_M.size()); }
  double final_error() const {
    return err_M.empty() ? std::numeric_limits<double>::infinity() : std::max(err_U.back(), err_M.back());
  }
};

struct SweepResult {
  FieldSeries U, M;
  SweepReport report;
};

/// Block residual norms of the discrete system, each relative to the size of
/// its unknown: res_F = ||F(U,M)|| / ||U||, res_G = ||G(U,M)|| / ||M|| in the
/// tau h^d weighted norm (absolute when the unknown vanishes).
inline std::pair<double, double> system_residual(const Scheme& sc, const FieldSeries& U, const FieldSeries& M) {
  const double nu = norm(U), nm = norm(M);
  const double f = norm(hjb_residual(sc, U, M)), g = norm(kfp_residual(sc, U, M));
  return {nu > 0.0 ? f / nu : f, nm > 0.0 ? g / nm : g};
}

namespace detail {
inline void relax_into(FieldSeries& old, const FieldSeries& fresh, double alpha) {
  if (alpha == 1.0) {
    old = fresh;
    return;
  }
  auto o = old.data();
  auto f = fresh.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * f[i] + (1.0 - alpha) * o[i];
}
}  // namespace detail

using IterationHook = std::function<void(const SweepReport&)>;

/// Alternating sweeping: HJB with M frozen, relax U, KFP with U frozen, relax
/// M, until max(err_U, err_M) <= eps. `U_init`, when given, is the base of the
/// first U relaxation; without it the first HJB result is taken as is and
/// err_U of that iteration is +inf. Non-convergence returns the iterate with
/// the smallest error and converged = false.
inline SweepResult alternating_sweep(const Scheme& sc, FieldSeries M_init, const SweepOptions& opt,
                                     std::optional<FieldSeries> U_init = std::nullopt,
                                     const IterationHook& hook = {}) {
  if (!(opt.eps > 0.0 && opt.eps < 1.0)) throw std::invalid_argument("sweep tolerance must lie in (0, 1)");
  if (opt.max_iters < 1) throw std::invalid_argument("max_iters must be positive");
  opt.schedule.validate();
  if (!M_init.grid().same_mesh(sc.grid())) throw GridError("initial density lives on another grid");
  if (U_init && !U_init->grid().same_mesh(sc.grid())) throw GridError("initial value function lives on another grid");

  const auto t0 = std::chrono::steady_clock::now();
  SweepResult res{U_init ? std::move(*U_init) : FieldSeries(sc.grid()), std::move(M_init), {}};
  bool have_U = U_init.has_value();
  auto& rep = res.report;
  FieldSeries best_U, best_M;
  double best_err = std::numeric_limits<double>::infinity();
  const auto& sch = opt.schedule;
  bool late = false;
  double guard_scale = 1.0;
  int rising = 0;
  double prev_err = std::numeric_limits<double>::infinity();

  for (int k = 0; k < opt.max_iters; ++k) {
    double alpha = late ? *sch.alpha_late : std::min(1.0, sch.alpha0 * std::pow(sch.growth, k));
    alpha = std::max(alpha * guard_scale, std::min(alpha, sch.alpha_floor));

    double eu, em, inner;
    try {
      auto hjb = solve_hjb(sc, res.M);
      inner = hjb.stats.average();
      if (have_U) {
        eu = rel_norm(hjb.U, res.U);
        detail::relax_into(res.U, hjb.U, alpha);
      } else {
        eu = std::numeric_limits<double>::infinity();
        res.U = std::move(hjb.U);
        have_U = true;
      }
      FieldSeries M_new = solve_kfp(sc, res.U);
      em = rel_norm(M_new, res.M);
      detail::relax_into(res.M, M_new, alpha);
    } catch (const MarchError& e) {
      rep.aborted = true;
      rep.message = std::string("iteration ") + std::to_string(k + 1) + ": " + e.what();
      break;
    } catch (const SolverError& e) {
      rep.aborted = true;
      rep.message = std::string("iteration ") + std::to_string(k + 1) + ": " + e.what();
      break;
    }
    if (!std::isfinite(em) || std::isnan(eu) || !res.U.all_finite() || !res.M.all_finite()) {
      rep.aborted = true;
      rep.message = "iteration " + std::to_string(k + 1) + ": non-finite iterate";
      break;
    }

    rep.err_U.push_back(eu);
    rep.err_M.push_back(em);
    rep.alpha.push_back(alpha);
    rep.inner_avg.push_back(inner);
    if (opt.track_residuals) {
      const auto [f, g] = system_residual(sc, res.U, res.M);
      rep.res_F.push_back(f);
      rep.res_G.push_back(g);
    } else {
      rep.res_F.push_back(std::numeric_limits<double>::quiet_NaN());
      rep.res_G.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    rep.elapsed.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (hook) hook(rep);

    const double err = std::max(eu, em);
    if (err <= opt.eps) {
      rep.converged = true;
      rep.best_iteration = k;
      return res;
    }
    if (err < best_err) {
      best_err = err;
      best_U = res.U;
      best_M = res.M;
      rep.best_iteration = k;
    }
    if (sch.alpha_late && err < sch.late_factor * opt.eps) late = true;
    if (sch.guard && std::isfinite(prev_err)) {
      rising = err > prev_err ? rising + 1 : 0;
      if (rising >= sch.guard_window) {
        guard_scale *= 0.5;
        rising = 0;
        spdlog::debug("sweep error rose {} times in a row; relaxation scaled by {}", sch.guard_window, guard_scale);
      }
    }
    prev_err = err;
  }
  if (rep.best_iteration >= 0 && best_U.data().size() > 0) {
    res.U = std::move(best_U);
    res.M = std::move(best_M);
  }
  if (rep.message.empty())
    rep.message = "no convergence after " + std::to_string(rep.iterations()) + " iterations (error " +
                  std::to_string(rep.final_error()) + ")";
  return res;
}

}  // namespace mfg
