#pragma once

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/marchers.hpp"
#include "mfg/newton.hpp"
#include "mfg/sweep.hpp"

namespace mfg {

class MultiscaleError : public std::runtime_error {
 public:
  MultiscaleError(const std::string& what, int level)
      : std::runtime_error("level " + std::to_string(level) + ": " + what), level_(level) {}
  int level() const { return level_; }

 private:
  int level_;
};

enum class Interpolation { Linear, Cubic };

inline const char* to_string(Interpolation i) { return i == Interpolation::Linear ? "linear" : "cubic"; }

namespace detail {

// Value halfway between samples i and i+1 of a line of K samples spaced
// `stride` apart: the 2-point average or the 4-point cubic (-1, 9, 9, -1)/16.
// Open lines shift the cubic window inward at the ends and fall back to the
// average when K < 4.
inline double midpoint(const double* c, std::ptrdiff_t stride, int K, int i, bool periodic, Interpolation m) {
  auto at = [&](int k) { return c[static_cast<std::ptrdiff_t>(periodic ? wrap_index(k, K) : k) * stride]; };
  if (m == Interpolation::Linear || (!periodic && K < 4)) return 0.5 * (at(i) + at(i + 1));
  if (periodic || (i >= 1 && i + 2 <= K - 1)) return (-at(i - 1) + 9.0 * at(i) + 9.0 * at(i + 1) - at(i + 2)) / 16.0;
  // one-sided cubic through the four nearest nodes, evaluated at i + 1/2
  if (i == 0) return (5.0 * at(0) + 15.0 * at(1) - 5.0 * at(2) + at(3)) / 16.0;
  return (5.0 * at(K - 1) + 15.0 * at(K - 2) - 5.0 * at(K - 3) + at(K - 4)) / 16.0;
}

/// Doubles one axis of a row-major array with extents `ext`.
inline std::vector<double> refine_axis(const std::vector<double>& in, std::vector<int>& ext, std::size_t axis,
                                       bool periodic, Interpolation m) {
  const int K = ext[axis];
  const int F = periodic ? 2 * K : 2 * K - 1;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(ext[a]);
  for (std::size_t a = axis + 1; a < ext.size(); ++a) inner *= static_cast<std::size_t>(ext[a]);
  std::vector<double> out(outer * static_cast<std::size_t>(F) * inner);
  const auto stride = static_cast<std::ptrdiff_t>(inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) {
      const double* c = in.data() + o * static_cast<std::size_t>(K) * inner + j;
      double* f = out.data() + o * static_cast<std::size_t>(F) * inner + j;
      for (int i = 0; i < K; ++i) {
        f[2 * i * stride] = c[i * stride];
        if (2 * i + 1 < F) f[(2 * i + 1) * stride] = midpoint(c, stride, K, i, periodic, m);
      }
    }
  ext[axis] = F;
  return out;
}

}  // namespace detail

/// Space-time prolongation onto the refined grid: coarse points are copied,
/// new points are interpolated axis by axis (time, then each space axis, with
/// periodic wrap in space). Linear mode is the tensor-product average, so an
/// odd-odd point in 1D gets the mean of its four coarse corners.
inline FieldSeries interpolate_up(const FieldSeries& X, const LevelGrid& fine,
                                  Interpolation method = Interpolation::Linear) {
  const auto& c = X.grid();
  if (!c.refined_by(fine)) throw GridError("interpolate_up: target grid is not the refinement of the source");
  std::vector<int> ext{c.nt + 1};
  for (int a = 0; a < c.dim; ++a) ext.push_back(c.n);
  std::vector<double> v(X.data().begin(), X.data().end());
  v = detail::refine_axis(v, ext, 0, false, method);
  for (int a = 0; a < c.dim; ++a) v = detail::refine_axis(v, ext, static_cast<std::size_t>(a + 1), true, method);
  return FieldSeries(fine, std::move(v));
}

enum class CoarseSolver { Newton, RelaxedSweep };

inline const char* to_string(CoarseSolver s) { return s == CoarseSolver::Newton ? "newton" : "sweep"; }

struct MultiscaleOptions {
  int L0 = 5, L = 10;
  GridOptions grid;
  SchemeOrder order = SchemeOrder::Second;
  MarchOptions march;
  CoarseSolver coarse = CoarseSolver::RelaxedSweep;
  Interpolation interpolation = Interpolation::Linear;
  double eps = 1e-6;
  std::vector<double> level_eps;  // optional override, one entry per level L0..L
  int max_iters = 200;
  /// Level l starts its sweep with alpha0 * level_growth^(l - L0) (capped at
  /// 1); `schedule` supplies the in-level growth, late factor and guard.
  RelaxSchedule schedule;
  double level_growth = 1.0;
  std::optional<double> alpha_finest;  // flat alpha on level L when set
  NewtonOptions newton;
  bool warm_start_U = true;
};

struct LevelReport {
  int level = 0;
  std::string solver;
  SweepReport sweep;  // empty for a Newton level
  int newton_iterations = 0;
  double interpolation_seconds = 0.0;
  double solve_seconds = 0.0;
  double residual_F = 0.0, residual_G = 0.0;
};

struct MultiscaleResult {
  FieldSeries U, M;
  std::vector<LevelReport> levels;
  double seconds = 0.0;
};

using LevelHook = std::function<void(const LevelReport&, const FieldSeries& U, const FieldSeries& M)>;

/// Relaxation schedule used on `level` under `opt`.
inline RelaxSchedule level_schedule(const MultiscaleOptions& opt, int level) {
  RelaxSchedule s = opt.schedule;
  if (level == opt.L && opt.alpha_finest) {
    s = RelaxSchedule::constant(*opt.alpha_finest);
    s.guard = opt.schedule.guard;
    return s;
  }
  s.alpha0 = std::min(1.0, opt.schedule.alpha0 * std::pow(opt.level_growth, level - opt.L0));
  return s;
}

/// Coarse solve on L0, then interpolate M (and U as the warm start) upward and
/// sweep on every finer level. Throws MultiscaleError naming the level when a
/// solve fails or a sweep does not converge.
inline MultiscaleResult multiscale_solve(const ProblemSpec& spec, const MultiscaleOptions& opt,
                                         const LevelHook& hook = {}) {
  if (!(opt.level_growth >= 1.0)) throw std::invalid_argument("level growth must be >= 1");
  const auto grids = build_hierarchy(spec, opt.L0, opt.L, opt.grid);
  if (!opt.level_eps.empty() && opt.level_eps.size() != grids.size())
    throw std::invalid_argument("level_eps needs one entry per level");
  const auto t0 = std::chrono::steady_clock::now();
  auto since = [](auto start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  MultiscaleResult out;
  std::optional<FieldSeries> U, M;
  for (std::size_t k = 0; k < grids.size(); ++k) {
    const auto& g = grids[k];
    const int level = opt.L0 + static_cast<int>(k);
    Scheme sc(spec, g, opt.order, opt.march);
    LevelReport rep;
    rep.level = level;

    SweepOptions so;
    so.eps = opt.level_eps.empty() ? opt.eps : opt.level_eps[k];
    so.max_iters = opt.max_iters;
    so.schedule = level_schedule(opt, level);

    if (k == 0 && opt.coarse == CoarseSolver::Newton) {
      rep.solver = to_string(CoarseSolver::Newton);
      const auto ts = std::chrono::steady_clock::now();
      NewtonOptions no = opt.newton;
      no.tol = std::min(no.tol, so.eps);
      try {
        auto r = newton_solve(sc, no);
        rep.newton_iterations = r.iterations;
        U = std::move(r.U);
        M = std::move(r.M);
      } catch (const NewtonError& e) {
        throw MultiscaleError(std::string("coarse Newton solve failed: ") + e.what(), level);
      } catch (const MarchError& e) {
        throw MultiscaleError(std::string("coarse Newton solve failed: ") + e.what(), level);
      }
      rep.solve_seconds = since(ts);
    } else {
      rep.solver = to_string(CoarseSolver::RelaxedSweep);
      FieldSeries M_init(g);
      std::optional<FieldSeries> U_init;
      if (k == 0) {
        M_init = FieldSeries::constant_in_time(GridFn(g, sc.mT()));
      } else {
        const auto ti = std::chrono::steady_clock::now();
        M_init = interpolate_up(*M, g, opt.interpolation);
        if (opt.warm_start_U) U_init = interpolate_up(*U, g, opt.interpolation);
        rep.interpolation_seconds = since(ti);
      }
      const auto ts = std::chrono::steady_clock::now();
      auto r = alternating_sweep(sc, std::move(M_init), so, std::move(U_init));
      rep.solve_seconds = since(ts);
      rep.sweep = r.report;
      if (!r.report.converged) throw MultiscaleError("sweep did not converge: " + r.report.message, level);
      U = std::move(r.U);
      M = std::move(r.M);
    }
    std::tie(rep.residual_F, rep.residual_G) = system_residual(sc, *U, *M);
    spdlog::info("level {} ({}): N={} Nt={} solve {:.3f}s residuals {:.2e} {:.2e}", level, rep.solver, g.n, g.nt,
                 rep.solve_seconds, rep.residual_F, rep.residual_G);
    if (hook) hook(rep, *U, *M);
    out.levels.push_back(std::move(rep));
  }
  out.U = std::move(*U);
  out.M = std::move(*M);
  out.seconds = since(t0);
  return out;
}

}  // namespace mfg
