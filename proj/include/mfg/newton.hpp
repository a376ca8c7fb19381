#pragma once

#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/marchers.hpp"
#include "mfg/sweep.hpp"

namespace mfg {

class NewtonError : public std::runtime_error {
 public:
  NewtonError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// All U frames followed by all M frames of one level.
struct CoupledState {
  static Eigen::VectorXd stack(const FieldSeries& U, const FieldSeries& M) {
    const auto n = static_cast<Eigen::Index>(U.data().size());
    Eigen::VectorXd x(2 * n);
    std::copy(U.data().begin(), U.data().end(), x.data());
    std::copy(M.data().begin(), M.data().end(), x.data() + n);
    return x;
  }
  static std::pair<FieldSeries, FieldSeries> unstack(const LevelGrid& g, const Eigen::VectorXd& x) {
    const std::size_t n = g.frames() * g.points();
    if (static_cast<std::size_t>(x.size()) != 2 * n) throw GridError("stacked state has the wrong length");
    return {FieldSeries(g, std::vector<double>(x.data(), x.data() + n)),
            FieldSeries(g, std::vector<double>(x.data() + n, x.data() + 2 * n))};
  }
};

/// Stacked residual (F; G) of the discrete system.
inline Eigen::VectorXd stacked_residual(const Scheme& sc, const FieldSeries& U, const FieldSeries& M) {
  return CoupledState::stack(hjb_residual(sc, U, M), kfp_residual(sc, U, M));
}

namespace detail {

using Triplets = std::vector<Eigen::Triplet<double>>;

/// Adds scale * (cL L + cJ J(u)) at block (row0, col0), or the transpose of
/// the J part when `transpose` is set. L is symmetric.
inline void add_frame_operator(const Scheme& sc, const Linearization& lin, bool transpose, double cL,
                               double cJ, Eigen::Index row0, Eigen::Index col0, Triplets& t) {
  const auto& g = sc.grid();
  const double l = cL * sc.spec().nu / (g.h() * g.h());
  for (std::size_t p = 0; p < g.points(); ++p) {
    const auto r = row0 + static_cast<Eigen::Index>(p);
    t.emplace_back(r, col0 + static_cast<Eigen::Index>(p), 2.0 * g.dim * l);
    for (int axis = 0; axis < g.dim; ++axis)
      for (int o : {-1, 1}) t.emplace_back(r, col0 + static_cast<Eigen::Index>(g.shift(p, axis, o)), -l);
    for (int s = 0; s < lin.slots(); ++s) {
      const Stencil st = slot_stencil(sc.order(), s % 2, g.h());
      const double gs = cJ * lin.g(s)[p];
      if (gs == 0.0) continue;
      for (int k = 0; k < st.size; ++k) {
        const auto q = static_cast<Eigen::Index>(g.shift(p, s / 2, st.off[k]));
        if (transpose)
          t.emplace_back(row0 + q, col0 + static_cast<Eigen::Index>(p), gs * st.coef[k]);
        else
          t.emplace_back(r, col0 + q, gs * st.coef[k]);
      }
    }
  }
}

/// Adds scale * d(J(u)^T m)/du at block (row0, col0).
inline void add_transport_derivative(const Scheme& sc, const Linearization& lin, std::span<const double> m,
                                     double scale, Eigen::Index row0, Eigen::Index col0, Triplets& t) {
  const auto& g = sc.grid();
  const int S = lin.slots();
  double hess[16];
  for (std::size_t i = 0; i < g.points(); ++i) {
    if (m[i] == 0.0) continue;
    hamiltonian_hessian_at(lin.pair(), i, sc.spec().gamma, hess);
    for (int s = 0; s < S; ++s) {
      const Stencil ss = slot_stencil(sc.order(), s % 2, g.h());
      for (int c = 0; c < S; ++c) {
        const double hsc = hess[s * S + c];
        if (hsc == 0.0) continue;
        const Stencil sc_ = slot_stencil(sc.order(), c % 2, g.h());
        for (int k = 0; k < ss.size; ++k) {
          const auto j = row0 + static_cast<Eigen::Index>(g.shift(i, s / 2, ss.off[k]));
          for (int l = 0; l < sc_.size; ++l) {
            const auto q = col0 + static_cast<Eigen::Index>(g.shift(i, c / 2, sc_.off[l]));
            t.emplace_back(j, q, scale * m[i] * ss.coef[k] * hsc * sc_.coef[l]);
          }
        }
      }
    }
  }
}

inline void add_coupling_derivative(const Scheme& sc, const Coupling& c, std::span<const double> m, double scale,
                                    Eigen::Index row0, Eigen::Index col0, Triplets& t) {
  if (c.kind == Coupling::Kind::Zero) return;
  const auto P = sc.grid().points();
  const auto J = coupling_jacobian(c, sc.grid(), m);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < P; ++j)
      if (J[i * P + j] != 0.0)
        t.emplace_back(row0 + static_cast<Eigen::Index>(i), col0 + static_cast<Eigen::Index>(j), scale * J[i * P + j]);
}

}  // namespace detail

/// Exact Jacobian of the stacked residual with respect to the stacked state.
inline Eigen::SparseMatrix<double> coupled_jacobian(const Scheme& sc, const FieldSeries& U, const FieldSeries& M) {
  const auto& g = sc.grid();
  const auto P = static_cast<Eigen::Index>(g.points());
  const auto NU = static_cast<Eigen::Index>(g.frames()) * P;
  const double tau = g.tau(), ce = sc.theta_explicit(), ci = sc.theta_implicit();
  const bool second = sc.order() == SchemeOrder::Second;
  const auto& spec = sc.spec();
  auto urow = [&](int n) { return static_cast<Eigen::Index>(n) * P; };
  auto mrow = [&](int n) { return NU + static_cast<Eigen::Index>(n) * P; };

  std::vector<Linearization> lin;
  lin.reserve(g.frames());
  for (int n = 0; n <= g.nt; ++n) lin.push_back(sc.linearize(U.frame(n)));

  detail::Triplets t;
  t.reserve(static_cast<std::size_t>(2 * NU) * (second ? 40 : 16));
  // F^0
  for (Eigen::Index p = 0; p < P; ++p) t.emplace_back(p, p, 1.0);
  detail::add_coupling_derivative(sc, spec.V0, M.frame(0), -1.0, 0, mrow(0), t);
  for (int n = 0; n < g.nt; ++n) {
    const auto r = urow(n + 1);
    for (Eigen::Index p = 0; p < P; ++p) {
      t.emplace_back(r + p, urow(n + 1) + p, 1.0);
      t.emplace_back(r + p, urow(n) + p, -1.0);
    }
    detail::add_frame_operator(sc, lin[n + 1], false, ci, ci, r, urow(n + 1), t);
    if (second) {
      detail::add_frame_operator(sc, lin[n], false, ce, ce, r, urow(n), t);
      detail::add_coupling_derivative(sc, spec.V, M.frame(n), -0.5 * tau, r, mrow(n), t);
      detail::add_coupling_derivative(sc, spec.V, M.frame(n + 1), -0.5 * tau, r, mrow(n + 1), t);
    } else {
      detail::add_coupling_derivative(sc, spec.V, M.frame(n), -tau, r, mrow(n), t);
    }
  }
  // G^(N_t)
  for (Eigen::Index p = 0; p < P; ++p) t.emplace_back(mrow(g.nt) + p, mrow(g.nt) + p, 1.0);
  for (int n = 0; n < g.nt; ++n) {
    const auto r = mrow(n);
    for (Eigen::Index p = 0; p < P; ++p) {
      t.emplace_back(r + p, mrow(n) + p, 1.0);
      t.emplace_back(r + p, mrow(n + 1) + p, -1.0);
    }
    if (second) {
      detail::add_frame_operator(sc, lin[n], true, ci, ci, r, mrow(n), t);
      detail::add_frame_operator(sc, lin[n + 1], true, ce, ce, r, mrow(n + 1), t);
      detail::add_transport_derivative(sc, lin[n], M.frame(n), ci, r, urow(n), t);
      detail::add_transport_derivative(sc, lin[n + 1], M.frame(n + 1), ce, r, urow(n + 1), t);
    } else {
      detail::add_frame_operator(sc, lin[n + 1], true, ci, ci, r, mrow(n), t);
      detail::add_transport_derivative(sc, lin[n + 1], M.frame(n), ci, r, urow(n + 1), t);
    }
  }
  Eigen::SparseMatrix<double> J(2 * NU, 2 * NU);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

struct NewtonOptions {
  double tol = 1e-6;
  int max_newton = 50;
  int max_halvings = 20;
};

struct NewtonResult {
  FieldSeries U, M;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual;  // max(res_F, res_G) before each step and at the end
  double seconds = 0.0;
};

/// Newton's method on the stacked system from (U, M). Steps are halved (up to
/// max_halvings times) until the weighted residual norm decreases.
inline NewtonResult newton_iterate(const Scheme& sc, FieldSeries U, FieldSeries M, const NewtonOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& g = sc.grid();
  const double w = std::sqrt(g.tau() * g.cell());
  NewtonResult res;
  auto measure = [&](const FieldSeries& u, const FieldSeries& m) {
    const auto [f, gg] = system_residual(sc, u, m);
    return std::max(f, gg);
  };
  Eigen::VectorXd x = CoupledState::stack(U, M);
  Eigen::VectorXd R = stacked_residual(sc, U, M);
  double rel = measure(U, M);
  res.residual.push_back(rel);
  while (rel > opt.tol) {
    if (res.iterations == opt.max_newton) break;
    const auto J = coupled_jacobian(sc, U, M);
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(J);
    lu.factorize(J);
    if (lu.info() != Eigen::Success) throw NewtonError("singular Jacobian: " + lu.lastErrorMessage(), rel);
    const Eigen::VectorXd dx = lu.solve(-R);
    if (!dx.allFinite()) throw NewtonError("Jacobian solve produced non-finite values", rel);

    const double rnorm = w * R.norm();
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, step *= 0.5) {
      const Eigen::VectorXd xt = x + step * dx;
      auto [Ut, Mt] = CoupledState::unstack(g, xt);
      const Eigen::VectorXd Rt = stacked_residual(sc, Ut, Mt);
      if (Rt.allFinite() && w * Rt.norm() < rnorm) {
        x = xt;
        R = Rt;
        U = std::move(Ut);
        M = std::move(Mt);
        accepted = true;
        break;
      }
    }
    ++res.iterations;
    if (!accepted) throw NewtonError("damped step failed to reduce the residual", rel);
    rel = measure(U, M);
    res.residual.push_back(rel);
  }
  res.converged = rel <= opt.tol;
  res.U = std::move(U);
  res.M = std::move(M);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Default initial guess: M constant in time (the terminal density) and U
/// from one HJB march against it.
inline std::pair<FieldSeries, FieldSeries> naive_guess(const Scheme& sc) {
  FieldSeries M = FieldSeries::constant_in_time(GridFn(sc.grid(), sc.mT()));
  FieldSeries U = solve_hjb(sc, M).U;
  return {std::move(U), std::move(M)};
}

/// Coupled Newton solve from the naive guess. Throws NewtonError when the
/// Jacobian is singular or max_newton is exceeded.
inline NewtonResult newton_solve(const Scheme& sc, const NewtonOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto [U, M] = naive_guess(sc);
  auto res = newton_iterate(sc, std::move(U), std::move(M), opt);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!res.converged) throw NewtonError("Newton iteration limit reached", res.residual.back());
  return res;
}

}  // namespace mfg
