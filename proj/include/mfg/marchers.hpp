#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/discrete_ops.hpp"
#include "mfg/grid.hpp"
#include "mfg/linsolve.hpp"
#include "mfg/problem.hpp"

namespace mfg {

/// Failure inside a time march: inner Newton divergence or a non-finite state.
class MarchError : public std::runtime_error {
 public:
  MarchError(const std::string& what, int step, double last_change)
      : std::runtime_error(what + " at time step " + std::to_string(step) + " (last relative change " +
                           std::to_string(last_change) + ")"),
        step_(step),
        last_change_(last_change) {}
  int step() const { return step_; }
  double last_change() const { return last_change_; }

 private:
  int step_;
  double last_change_;
};

struct MarchOptions {
  double eps_inner = 1e-7;
  int max_inner = 50;
  double lin_tol = 0.0;  // 0 selects the per-dimension default
  int max_krylov = 500;
  /// Shift each KFP frame by a constant so its sum matches the right-hand
  /// side exactly. Off by default; the direct 1D solve conserves mass to
  /// round-off without it.
  bool mass_projection = false;
};

struct HjbStats {
  std::vector<int> inner_iterations;  // one count per time step

  double average() const {
    if (inner_iterations.empty()) return 0.0;
    return std::accumulate(inner_iterations.begin(), inner_iterations.end(), 0.0) /
           static_cast<double>(inner_iterations.size());
  }
};

/// Everything a level needs to march: the grid, the sampled problem data
/// and the frame solver. Holds cached FFT plans for the 2D preconditioner,
/// so one instance must not be shared between threads that march.
class Scheme {
 public:
  Scheme(ProblemSpec spec, const LevelGrid& grid, SchemeOrder order, MarchOptions opt = {})
      : spec_(std::move(spec)), grid_(grid), order_(order), opt_(opt) {
    spec_.validate();
    if (grid.dim != spec_.dim) throw GridError("grid dimension does not match the problem");
    if (grid.T != spec_.T) throw GridError("grid end time does not match the problem");
    if (grid.n < min_points(order) || grid.n < 3)
      throw GridError("grid too small for the chosen scheme");
    phi_ = sampled(spec_.phi, grid);
    u0_ = sampled(spec_.u0, grid);
    mT_ = sampled(spec_.mT, grid);
    if (opt_.lin_tol <= 0.0) opt_.lin_tol = grid.dim == 1 ? kDefaultTol1D : kDefaultTol2D;
  }

  const ProblemSpec& spec() const { return spec_; }
  const LevelGrid& grid() const { return grid_; }
  SchemeOrder order() const { return order_; }
  const MarchOptions& options() const { return opt_; }
  const std::vector<double>& phi() const { return phi_; }
  const std::vector<double>& u0() const { return u0_; }
  const std::vector<double>& mT() const { return mT_; }
  /// Weight of the explicit half of each time step: tau/2 (Crank-Nicolson) or 0.
  double theta_explicit() const { return order_ == SchemeOrder::Second ? 0.5 * grid_.tau() : 0.0; }
  double theta_implicit() const { return order_ == SchemeOrder::Second ? 0.5 * grid_.tau() : grid_.tau(); }

  Linearization linearize(std::span<const double> u) const {
    return Linearization(grid_, order_, u, phi_, spec_.gamma);
  }

  void coupling(const Coupling& c, std::span<const double> m, std::span<double> out) const {
    coupling_apply(c, grid_, m, out);
  }

  /// Solves (I + cL L + cJ J) x = rhs, or with J^T when `transpose`. `x`
  /// carries the initial guess for the 2D iterative solve.
  void solve_frame(const Linearization& lin, bool transpose, double cL, double cJ,
                   std::span<const double> rhs, std::span<double> x) const {
    if (grid_.dim == 1) {
      PeriodicBandMatrix A = frame_matrix(lin, cL, cJ);
      if (transpose) A = A.transpose();
      const auto sol = solve(A, rhs, opt_.lin_tol);
      std::copy(sol.begin(), sol.end(), x.begin());
      return;
    }
    const std::size_t P = grid_.points();
    std::vector<double> tmp(P);
    LinearOp op = [&](std::span<const double> in, std::span<double> out) {
      laplace_apply(grid_, spec_.nu, in, out);
      if (transpose)
        lin.apply_transpose(in, tmp);
      else
        lin.apply(in, tmp);
      for (std::size_t i = 0; i < P; ++i) out[i] = in[i] + cL * out[i] + cJ * tmp[i];
    };
    FourierDiffusionSolver& pre = preconditioner(cL);
    LinearOp M = [&](std::span<const double> in, std::span<double> out) { pre.apply(in, out); };
    bicgstab(op, M, rhs, x, opt_.lin_tol, opt_.max_krylov);
  }

  /// The 1D frame matrix I + cL L + cJ J(u) in periodic band form.
  PeriodicBandMatrix frame_matrix(const Linearization& lin, double cL, double cJ) const {
    const int n = grid_.n;
    const int b = order_ == SchemeOrder::Second ? 2 : 1;
    PeriodicBandMatrix A = PeriodicBandMatrix::identity(n, b);
    const double l = cL * spec_.nu / (grid_.h() * grid_.h());
    for (int i = 0; i < n; ++i) {
      A.diag(i, 0) += 2.0 * l;
      A.diag(i, -1) -= l;
      A.diag(i, 1) -= l;
    }
    for (int s = 0; s < 2; ++s) {
      const Stencil st = slot_stencil(order_, s, grid_.h());
      const auto& gs = lin.g(s);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < st.size; ++k) A.diag(i, st.off[k]) += cJ * gs[i] * st.coef[k];
    }
    return A;
  }

 private:
  static std::vector<double> sampled(const TrigPoly& f, const LevelGrid& g) {
    const GridFn s = sample(f, g);
    return {s.values().begin(), s.values().end()};
  }

  FourierDiffusionSolver& preconditioner(double c) const {
    auto it = pre_.find(c);
    if (it == pre_.end())
      it = pre_.emplace(c, std::make_unique<FourierDiffusionSolver>(grid_, spec_.nu, c)).first;
    return *it->second;
  }

  ProblemSpec spec_;
  LevelGrid grid_;
  SchemeOrder order_;
  MarchOptions opt_;
  std::vector<double> phi_, u0_, mT_;
  mutable std::map<double, std::unique_ptr<FourierDiffusionSolver>> pre_;
};

namespace detail {
inline void require_finite(std::span<const double> v, const char* what, int step) {
  for (double x : v)
    if (!std::isfinite(x)) throw MarchError(std::string("non-finite ") + what, step, NAN);
}
}  // namespace detail

struct HjbResult {
  FieldSeries U;
  HjbStats stats;
};

/// Forward HJB march with M frozen. Each step solves the implicit relation by
/// Newton linearization started from u^n:
///   (I + c L + c J(Z)) Z' = (I - c_e L) u^n + rhs(V) - c_e H(u^n) - c H(Z) + c J(Z) Z
/// with c = c_e = tau/2 (second order) or c = tau, c_e = 0 (first order),
/// until ||Z' - Z|| / ||Z|| < eps_inner.
inline HjbResult solve_hjb(const Scheme& sc, const FieldSeries& M) {
  const auto& g = sc.grid();
  if (!M.grid().same_mesh(g)) throw GridError("solve_hjb: density lives on another grid");
  const std::size_t P = g.points();
  const double tau = g.tau(), ce = sc.theta_explicit(), ci = sc.theta_implicit();
  const auto& opt = sc.options();
  const auto& spec = sc.spec();
  const bool second = sc.order() == SchemeOrder::Second;

  HjbResult res{FieldSeries(g), {}};
  res.stats.inner_iterations.reserve(g.nt);
  FieldSeries& U = res.U;

  std::vector<double> v0(P), vn(P), vn1(P), lu(P), rhs_base(P), rhs(P), jz(P), z(P), znew(P);
  sc.coupling(spec.V0, M.frame(0), v0);
  for (std::size_t i = 0; i < P; ++i) U.frame(0)[i] = sc.u0()[i] + v0[i];

  sc.coupling(spec.V, M.frame(0), vn);
  for (int n = 0; n < g.nt; ++n) {
    const auto un = U.frame(n);
    // the first-order scheme couples step n+1 to V[m^n]; second order averages V[m^n], V[m^(n+1)]
    if (second) sc.coupling(spec.V, M.frame(n + 1), vn1);
    if (second) {
      const Linearization lin_n = sc.linearize(un);
      laplace_apply(g, spec.nu, un, lu);
      for (std::size_t i = 0; i < P; ++i)
        rhs_base[i] = un[i] - ce * lu[i] + 0.5 * tau * (vn[i] + vn1[i]) - ce * lin_n.H()[i];
    } else {
      for (std::size_t i = 0; i < P; ++i) rhs_base[i] = un[i] + tau * vn[i];
    }

    std::copy(un.begin(), un.end(), z.begin());
    int k = 0;
    double change = INFINITY;
    while (true) {
      if (k == opt.max_inner) throw MarchError("inner Newton iteration did not converge", n + 1, change);
      const Linearization lin = sc.linearize(z);
      lin.apply(z, jz);
      for (std::size_t i = 0; i < P; ++i) rhs[i] = rhs_base[i] + ci * (jz[i] - lin.H()[i]);
      std::copy(z.begin(), z.end(), znew.begin());
      sc.solve_frame(lin, false, ci, ci, rhs, znew);
      ++k;
      double dn = 0.0, zn = 0.0;
      for (std::size_t i = 0; i < P; ++i) {
        dn += (znew[i] - z[i]) * (znew[i] - z[i]);
        zn += z[i] * z[i];
      }
      change = zn > 0.0 ? std::sqrt(dn / zn) : std::sqrt(dn);
      std::swap(z, znew);
      detail::require_finite(z, "HJB state", n + 1);
      if (change < opt.eps_inner) break;
    }
    res.stats.inner_iterations.push_back(k);
    U.set_frame(n + 1, z);
    if (second) std::swap(vn, vn1);
    else sc.coupling(spec.V, M.frame(n + 1), vn);
  }
  return res;
}

/// Backward KFP march with U frozen, m^(N_t) = mT:
///   (I + c L + c J^T(u_a)) m^(n-1) = (I - c_e L - c_e J^T(u^n)) m^n
/// where u_a = u^(n-1) for second order and u^n for first order.
inline FieldSeries solve_kfp(const Scheme& sc, const FieldSeries& U) {
  const auto& g = sc.grid();
  if (!U.grid().same_mesh(g)) throw GridError("solve_kfp: value function lives on another grid");
  const std::size_t P = g.points();
  const double ce = sc.theta_explicit(), ci = sc.theta_implicit();
  const bool second = sc.order() == SchemeOrder::Second;
  const auto& spec = sc.spec();

  FieldSeries M(g);
  M.set_frame(g.nt, sc.mT());
  std::vector<double> rhs(P), lm(P), jtm(P), x(P);
  Linearization lin_next = sc.linearize(U.frame(g.nt));
  for (int n = g.nt; n >= 1; --n) {
    const auto mn = M.frame(n);
    if (second) {
      laplace_apply(g, spec.nu, mn, lm);
      lin_next.apply_transpose(mn, jtm);
      for (std::size_t i = 0; i < P; ++i) rhs[i] = mn[i] - ce * (lm[i] + jtm[i]);
    } else {
      std::copy(mn.begin(), mn.end(), rhs.begin());
    }
    Linearization lin_impl = second ? sc.linearize(U.frame(n - 1)) : std::move(lin_next);
    std::copy(mn.begin(), mn.end(), x.begin());
    sc.solve_frame(lin_impl, true, ci, ci, rhs, x);
    if (sc.options().mass_projection) {
      const double shift = (std::accumulate(rhs.begin(), rhs.end(), 0.0) -
                            std::accumulate(x.begin(), x.end(), 0.0)) / static_cast<double>(P);
      for (double& v : x) v += shift;
    }
    detail::require_finite(x, "KFP state", n - 1);
    M.set_frame(n - 1, x);
    lin_next = second ? std::move(lin_impl) : sc.linearize(U.frame(n - 1));
  }

  double mmax = 0.0, mmin = 0.0;
  for (double v : M.data()) {
    mmax = std::max(mmax, v);
    mmin = std::min(mmin, v);
  }
  if (mmin < -1e-3 * mmax)
    spdlog::warn("KFP march produced negative density {:.3e} (max {:.3e}) on N={}", mmin, mmax, g.n);
  return M;
}

/// HJB residual rows, scaled by tau like the march:
///   F^0 = u^0 - u0 - V0[m^0]
///   F^(n+1) = u^(n+1) - u^n + c_e (L u^n + H^n) + c (L u^(n+1) + H^(n+1)) - tau V_avg
inline FieldSeries hjb_residual(const Scheme& sc, const FieldSeries& U, const FieldSeries& M) {
  const auto& g = sc.grid();
  const std::size_t P = g.points();
  const double tau = g.tau(), ce = sc.theta_explicit(), ci = sc.theta_implicit();
  const bool second = sc.order() == SchemeOrder::Second;
  const auto& spec = sc.spec();
  FieldSeries F(g);
  std::vector<double> v(P), vn(P), vn1(P), l0(P), l1(P);
  sc.coupling(spec.V0, M.frame(0), v);
  for (std::size_t i = 0; i < P; ++i) F.frame(0)[i] = U.frame(0)[i] - sc.u0()[i] - v[i];
  std::vector<double> Hn = sc.linearize(U.frame(0)).H();
  laplace_apply(g, spec.nu, U.frame(0), l0);
  sc.coupling(spec.V, M.frame(0), vn);
  for (int n = 0; n < g.nt; ++n) {
    std::vector<double> Hn1 = sc.linearize(U.frame(n + 1)).H();
    laplace_apply(g, spec.nu, U.frame(n + 1), l1);
    sc.coupling(spec.V, M.frame(n + 1), vn1);
    auto f = F.frame(n + 1);
    for (std::size_t i = 0; i < P; ++i) {
      const double vavg = second ? 0.5 * (vn[i] + vn1[i]) : vn[i];
      f[i] = U.frame(n + 1)[i] - U.frame(n)[i] + ce * (l0[i] + Hn[i]) + ci * (l1[i] + Hn1[i]) -
             tau * vavg;
    }
    std::swap(Hn, Hn1);
    std::swap(l0, l1);
    std::swap(vn, vn1);
  }
  return F;
}

/// KFP residual rows:
///   G^(N_t) = m^(N_t) - mT
///   G^n = m^n - m^(n+1) + c (L m^n + J^T(u_a) m^n) + c_e (L m^(n+1) + J^T(u^(n+1)) m^(n+1))
/// with u_a = u^n (second order) or u^(n+1) (first order).
inline FieldSeries kfp_residual(const Scheme& sc, const FieldSeries& U, const FieldSeries& M) {
  const auto& g = sc.grid();
  const std::size_t P = g.points();
  const double ce = sc.theta_explicit(), ci = sc.theta_implicit();
  const bool second = sc.order() == SchemeOrder::Second;
  const auto& spec = sc.spec();
  FieldSeries G(g);
  for (std::size_t i = 0; i < P; ++i) G.frame(g.nt)[i] = M.frame(g.nt)[i] - sc.mT()[i];
  std::vector<double> l0(P), l1(P), j0(P), j1(P);
  for (int n = 0; n < g.nt; ++n) {
    const Linearization lin1 = sc.linearize(U.frame(n + 1));
    laplace_apply(g, spec.nu, M.frame(n), l0);
    if (second) {
      sc.linearize(U.frame(n)).apply_transpose(M.frame(n), j0);
      laplace_apply(g, spec.nu, M.frame(n + 1), l1);
      lin1.apply_transpose(M.frame(n + 1), j1);
    } else {
      lin1.apply_transpose(M.frame(n), j0);
    }
    auto r = G.frame(n);
    for (std::size_t i = 0; i < P; ++i) {
      r[i] = M.frame(n)[i] - M.frame(n + 1)[i] + ci * (l0[i] + j0[i]);
      if (second) r[i] += ce * (l1[i] + j1[i]);
    }
  }
  return G;
}

inline HjbResult solve_hjb(const FieldSeries& M, const ProblemSpec& spec, SchemeOrder order,
                           double eps_inner = 1e-7) {
  MarchOptions opt;
  opt.eps_inner = eps_inner;
  return solve_hjb(Scheme(spec, M.grid(), order, opt), M);
}

inline FieldSeries solve_kfp(const FieldSeries& U, const ProblemSpec& spec, SchemeOrder order) {
  return solve_kfp(Scheme(spec, U.grid(), order), U);
}

}  // namespace mfg
