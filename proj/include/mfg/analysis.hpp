#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mfg/functions.hpp"
#include "mfg/grid.hpp"
#include "mfg/marchers.hpp"
#include "mfg/sweep.hpp"

namespace mfg {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense partial derivatives of the residual blocks F and G at one state,
/// each of size (N_t + 1) N^d.
struct JacobianBlocks {
  Eigen::MatrixXd F_u, F_m, G_u, G_m;
};

/// Largest stacked size (2 (N_t + 1) N^d) the dense analysis accepts.
inline constexpr std::size_t kMaxDenseAnalysis = 2000;

/// Central differences of F and G, one column per probed unknown. delta <= 0
/// selects 1e-6 (1 + max|state|). Columns are split over `threads` workers.
inline JacobianBlocks estimate_jacobians(const Scheme& sc, const FieldSeries& U, const FieldSeries& M,
                                         double delta = 0.0, int threads = 1) {
  const std::size_t n = U.data().size();
  if (2 * n > kMaxDenseAnalysis)
    throw AnalysisError("dense Jacobian analysis limited to stacked size " + std::to_string(kMaxDenseAnalysis));
  if (!U.grid().same_mesh(sc.grid()) || !M.grid().same_mesh(sc.grid()))
    throw GridError("estimate_jacobians: state lives on another grid");
  if (delta <= 0.0) {
    double mx = 0.0;
    for (double v : U.data()) mx = std::max(mx, std::abs(v));
    for (double v : M.data()) mx = std::max(mx, std::abs(v));
    delta = 1e-6 * (1.0 + mx);
  }
  const auto N = static_cast<Eigen::Index>(n);
  JacobianBlocks J{Eigen::MatrixXd(N, N), Eigen::MatrixXd(N, N), Eigen::MatrixXd(N, N), Eigen::MatrixXd(N, N)};

  // column c < n probes U, c >= n probes M
  auto probe = [&](std::size_t begin, std::size_t end) {
    FieldSeries u = U, m = M;
    for (std::size_t c = begin; c < end; ++c) {
      const bool on_u = c < n;
      FieldSeries& x = on_u ? u : m;
      const std::size_t j = on_u ? c : c - n;
      const double keep = x.data()[j];
      x.data()[j] = keep + delta;
      const auto fp = hjb_residual(sc, u, m), gp = kfp_residual(sc, u, m);
      x.data()[j] = keep - delta;
      const auto fm = hjb_residual(sc, u, m), gm = kfp_residual(sc, u, m);
      x.data()[j] = keep;
      Eigen::MatrixXd& F = on_u ? J.F_u : J.F_m;
      Eigen::MatrixXd& G = on_u ? J.G_u : J.G_m;
      const auto col = static_cast<Eigen::Index>(j);
      for (Eigen::Index r = 0; r < N; ++r) {
        F(r, col) = (fp.data()[r] - fm.data()[r]) / (2.0 * delta);
        G(r, col) = (gp.data()[r] - gm.data()[r]) / (2.0 * delta);
      }
    }
  };
  const std::size_t cols = 2 * n;
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(cols)));
  if (workers == 1) {
    probe(0, cols);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(probe, w * cols / workers, (w + 1) * cols / workers);
    for (auto& t : pool) t.join();
  }
  return J;
}

inline double spectral_radius(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols()) throw AnalysisError("spectral radius of a non-square matrix");
  if (A.rows() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  if (es.info() != Eigen::Success) throw AnalysisError("eigenvalue computation failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct SweepSpectrum {
  double rho = 0.0;
  std::complex<double> lambda_max;  // eigenvalue of largest modulus
  Eigen::VectorXcd eigenvalues;
};

namespace detail {
inline Eigen::FullPivLU<Eigen::MatrixXd> checked_lu(const Eigen::MatrixXd& A, const char* name) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) throw AnalysisError(std::string(name) + " is singular");
  return lu;
}
}  // namespace detail

/// Linearized M -> M map of one unrelaxed sweep: G_m^-1 G_u F_u^-1 F_m.
inline Eigen::MatrixXd sweep_map(const JacobianBlocks& b) {
  const auto fu = detail::checked_lu(b.F_u, "F_u");
  const auto gm = detail::checked_lu(b.G_m, "G_m");
  return gm.solve(b.G_u * fu.solve(b.F_m));
}

inline SweepSpectrum sweep_spectral_radius(const JacobianBlocks& b) {
  const Eigen::MatrixXd C = sweep_map(b);
  Eigen::EigenSolver<Eigen::MatrixXd> es(C, false);
  if (es.info() != Eigen::Success) throw AnalysisError("eigenvalue computation failed");
  SweepSpectrum s;
  s.eigenvalues = es.eigenvalues();
  Eigen::Index k = 0;
  s.rho = s.eigenvalues.cwiseAbs().maxCoeff(&k);
  s.lambda_max = s.eigenvalues[k];
  return s;
}

/// Upper end of the relaxation range that keeps the relaxed map contractive.
inline double relax_bound(double rho) {
  if (!(rho >= 0.0)) throw std::invalid_argument("spectral radius must be nonnegative");
  return 2.0 / (1.0 + rho);
}

inline std::pair<double, double> spectral_radius_commute_check(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.rows() != A.cols() || B.rows() != B.cols() || A.rows() != B.rows())
    throw AnalysisError("commute check needs square matrices of one size");
  return {spectral_radius(A * B), spectral_radius(B * A)};
}

/// Geometric mean of the last `window` err_M ratios of a sweep, skipping
/// iterations whose error is already at round-off.
inline double empirical_rate(const SweepReport& rep, int window = 5, double floor = 1e-13) {
  std::vector<double> e;
  for (double v : rep.err_M)
    if (v > floor) e.push_back(v);
  if (e.size() < 2) throw AnalysisError("not enough iterations to estimate a rate");
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(window), e.size() - 1);
  return std::pow(e.back() / e[e.size() - 1 - k], 1.0 / static_cast<double>(k));
}

/// Samples `fine` at the points of `coarse` (both nested in space and time).
inline FieldSeries restrict_to(const FieldSeries& fine, const LevelGrid& coarse) {
  const auto& f = fine.grid();
  if (f.dim != coarse.dim || f.T != coarse.T || f.n % coarse.n != 0 || f.nt % coarse.nt != 0 ||
      f.n / coarse.n != f.nt / coarse.nt)
    throw GridError("restrict_to: grids are not nested");
  const int r = f.n / coarse.n;
  FieldSeries out(coarse);
  for (int n = 0; n <= coarse.nt; ++n) {
    const auto src = fine.frame(n * r);
    auto dst = out.frame(n);
    for (std::size_t p = 0; p < coarse.points(); ++p) {
      std::size_t q = static_cast<std::size_t>(r) * p;
      if (coarse.dim == 2) {
        const std::size_t i1 = p / static_cast<std::size_t>(coarse.n), i2 = p % static_cast<std::size_t>(coarse.n);
        q = static_cast<std::size_t>(r) * (i1 * static_cast<std::size_t>(f.n) + i2);
      }
      dst[p] = src[q];
    }
  }
  return out;
}

struct OrderRow {
  int level = 0;
  double err_U = 0.0, err_M = 0.0;
  std::optional<double> order_U, order_M;  // empty on the first row or when an error vanishes
};

/// Errors of each level against the reference restricted to its points, and
/// observed orders log2(err(l-1) / err(l)).
inline std::vector<OrderRow> convergence_order_table(const std::vector<std::pair<FieldSeries, FieldSeries>>& levels,
                                                     const FieldSeries& ref_U, const FieldSeries& ref_M) {
  std::vector<OrderRow> rows;
  for (const auto& [U, M] : levels) {
    const auto& g = U.grid();
    if (ref_U.grid().n < g.n) throw AnalysisError("reference is coarser than a compared level");
    OrderRow row;
    row.level = g.level;
    row.err_U = rel_norm(U, restrict_to(ref_U, g));
    row.err_M = rel_norm(M, restrict_to(ref_M, g));
    if (!rows.empty()) {
      const auto& prev = rows.back();
      auto order = [](double a, double b) -> std::optional<double> {
        if (a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b)) return std::log2(a / b);
        return std::nullopt;
      };
      row.order_U = order(prev.err_U, row.err_U);
      row.order_M = order(prev.err_M, row.err_M);
    }
    rows.push_back(row);
  }
  return rows;
}

/// Smooth time factor: 1, cos(w t), sin(w t) or exp(-w t).
struct TimeFactor {
  enum class Kind { One, Cos, Sin, Exp };
  Kind kind = Kind::One;
  double rate = 0.0;

  double eval(double t, int d = 0) const {
    switch (kind) {
      case Kind::One:
        return d == 0 ? 1.0 : 0.0;
      case Kind::Cos:
        return std::pow(rate, d) * std::cos(rate * t + d * std::numbers::pi / 2);
      case Kind::Sin:
        return std::pow(rate, d) * std::sin(rate * t + d * std::numbers::pi / 2);
      case Kind::Exp:
        return std::pow(-rate, d) * std::exp(-rate * t);
    }
    return 0.0;
  }
};

/// Sum of time factor x trigonometric polynomial terms; exact derivatives.
struct ManufacturedField {
  std::vector<std::pair<TimeFactor, TrigPoly>> terms;

  double eval(double t, double x, double y, int dt = 0, int dx = 0, int dy = 0) const {
    double s = 0.0;
    for (const auto& [f, p] : terms) s += f.eval(t, dt) * p.eval(x, y, dx, dy);
    return s;
  }
};

struct ManufacturedPair {
  ManufacturedField u, m;
};

/// u = sin(2 pi x) cos t, m = 1 + cos(2 pi x) e^-t / 2 in 1D; the 2D pair adds
/// a y-dependent term to each so both axes carry transport.
inline ManufacturedPair default_manufactured(int dim) {
  using TF = TimeFactor;
  ManufacturedPair p;
  p.u.terms.push_back({TF{TF::Kind::Cos, 1.0}, catalog::sin_x(1, 1)});
  p.m.terms.push_back({TF{}, TrigPoly::constant(1.0)});
  p.m.terms.push_back({TF{TF::Kind::Exp, 1.0}, catalog::cos_x(0.5, 1)});
  if (dim == 2) {
    p.u.terms.push_back({TF{TF::Kind::Sin, 2.0}, catalog::parse("cos_cos(0.5, 1, 1)")});
    p.m.terms.push_back({TF{TF::Kind::Cos, 1.0}, catalog::sin_y(0.25, 1)});
  }
  return p;
}

struct TruncationRow {
  int level = 0;
  double h = 0.0;
  double F_strong = 0.0, G_strong = 0.0, G_weak = 0.0;
};

struct TruncationStudy {
  SchemeOrder order = SchemeOrder::Second;
  std::vector<TruncationRow> rows;
  double slope_F = 0.0, slope_G_strong = 0.0, slope_G_weak = 0.0;
};

namespace detail {

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::log(x[i]), b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Continuous gradient term and its p-derivatives for |p|^gamma.
struct PowerGrad {
  double H;
  double Hp[2];
  double Hpp[2][2];
};

inline PowerGrad power_grad(double p1, double p2, double gamma) {
  PowerGrad r{};
  const double s2 = p1 * p1 + p2 * p2;
  double s = std::sqrt(s2);
  r.H = std::pow(s, gamma);
  if (gamma < 2.0) s = std::max(s, 1e-12);
  const double a = gamma * std::pow(s, gamma - 2.0);
  const double b = gamma * (gamma - 2.0) * std::pow(s, gamma - 4.0);
  const double p[2] = {p1, p2};
  for (int i = 0; i < 2; ++i) {
    r.Hp[i] = a * p[i];
    for (int j = 0; j < 2; ++j) r.Hpp[i][j] = (i == j ? a : 0.0) + (s2 > 0.0 ? b * p[i] * p[j] : 0.0);
  }
  return r;
}

}  // namespace detail

/// Inserts the sampled manufactured pair into the discrete equations with
/// matching continuous source terms and measures what is left per level:
/// the HJB residual and the KFP residual in the discrete L2 norm, and the KFP
/// residual tested against the low Fourier modes (|k| <= 3). Initial and
/// terminal rows are excluded. Slopes are least-squares fits in log h.
inline TruncationStudy truncation_order_study(const ProblemSpec& spec, const ManufacturedPair& mp, SchemeOrder order,
                                              const std::vector<int>& levels, const GridOptions& gopt = {}) {
  TruncationStudy out;
  out.order = order;
  const double nu = spec.nu, gamma = spec.gamma;
  for (int level : levels) {
    const auto g = level_grid(spec.dim, level, spec.T, gopt);
    Scheme sc(spec, g, order);
    const std::size_t P = g.points();
    const double tau = g.tau(), w = tau * g.cell();
    const bool second = order == SchemeOrder::Second;

    FieldSeries U(g), M(g);
    for (int n = 0; n <= g.nt; ++n)
      for (std::size_t p = 0; p < P; ++p) {
        const auto [x, y] = g.coords(p);
        U.frame(n)[p] = mp.u.eval(g.t(n), x, y);
        M.frame(n)[p] = mp.m.eval(g.t(n), x, y);
      }
    const auto F = hjb_residual(sc, U, M);
    const auto G = kfp_residual(sc, U, M);

    // continuous sources at frame n: HJB u_t - nu lap u + phi + |grad u|^gamma - V[m],
    // KFP -m_t - nu lap m - div(m H_p(grad u)); V is applied to the sampled m
    std::vector<double> Su(P * g.frames()), Sm(P * g.frames()), V(P);
    for (int n = 0; n <= g.nt; ++n) {
      const double t = g.t(n);
      sc.coupling(spec.V, M.frame(n), V);
      for (std::size_t p = 0; p < P; ++p) {
        const auto [x, y] = g.coords(p);
        const auto& u = mp.u;
        const auto& m = mp.m;
        const double ux = u.eval(t, x, y, 0, 1, 0), uy = g.dim == 2 ? u.eval(t, x, y, 0, 0, 1) : 0.0;
        const double lap_u = u.eval(t, x, y, 0, 2, 0) + (g.dim == 2 ? u.eval(t, x, y, 0, 0, 2) : 0.0);
        const double lap_m = m.eval(t, x, y, 0, 2, 0) + (g.dim == 2 ? m.eval(t, x, y, 0, 0, 2) : 0.0);
        const auto pg = detail::power_grad(ux, uy, gamma);
        const double hess[2][2] = {{u.eval(t, x, y, 0, 2, 0), u.eval(t, x, y, 0, 1, 1)},
                                   {u.eval(t, x, y, 0, 1, 1), u.eval(t, x, y, 0, 0, 2)}};
        const double gm[2] = {m.eval(t, x, y, 0, 1, 0), g.dim == 2 ? m.eval(t, x, y, 0, 0, 1) : 0.0};
        double div = 0.0;
        for (int i = 0; i < g.dim; ++i) {
          div += gm[i] * pg.Hp[i];
          for (int j = 0; j < g.dim; ++j) div += m.eval(t, x, y) * pg.Hpp[i][j] * hess[i][j];
        }
        const std::size_t k = static_cast<std::size_t>(n) * P + p;
        Su[k] = u.eval(t, x, y, 1) - nu * lap_u + sc.phi()[p] + pg.H - V[p];
        Sm[k] = -m.eval(t, x, y, 1) - nu * lap_m - div;
      }
    }

    std::vector<std::vector<double>> modes;
    for (int k1 = 0; k1 <= 3; ++k1)
      for (int k2 = (g.dim == 2 ? -3 : 0); k2 <= (g.dim == 2 ? 3 : 0); ++k2) {
        if (k1 == 0 && k2 <= 0) continue;
        if (std::max(std::abs(k1), std::abs(k2)) > 3) continue;
        std::vector<double> c(P), s(P);
        for (std::size_t p = 0; p < P; ++p) {
          const auto [x, y] = g.coords(p);
          const double a = 2.0 * std::numbers::pi * (k1 * x + k2 * y);
          c[p] = std::cos(a);
          s[p] = std::sin(a);
        }
        modes.push_back(std::move(c));
        modes.push_back(std::move(s));
      }

    double rf = 0.0, rg = 0.0, rgw = 0.0;
    std::vector<double> r(P);
    for (int n = 0; n < g.nt; ++n) {
      const std::size_t a = static_cast<std::size_t>(n) * P, b = a + P;
      for (std::size_t p = 0; p < P; ++p) {
        const double su = second ? 0.5 * (Su[a + p] + Su[b + p]) : Su[b + p];
        const double e = F.frame(n + 1)[p] / tau - su;
        rf += w * e * e;
      }
      for (std::size_t p = 0; p < P; ++p) {
        const double sm = second ? 0.5 * (Sm[a + p] + Sm[b + p]) : Sm[a + p];
        r[p] = G.frame(n)[p] / tau - sm;
        rg += w * r[p] * r[p];
      }
      for (const auto& mode : modes) {
        double dot = 0.0;
        for (std::size_t p = 0; p < P; ++p) dot += r[p] * mode[p];
        dot *= g.cell();
        rgw += tau * dot * dot;
      }
    }
    out.rows.push_back({level, g.h(), std::sqrt(rf), std::sqrt(rg), std::sqrt(rgw)});
  }
  std::vector<double> h, f, gs, gw;
  for (const auto& row : out.rows) {
    h.push_back(row.h);
    f.push_back(row.F_strong);
    gs.push_back(row.G_strong);
    gw.push_back(row.G_weak);
  }
  out.slope_F = detail::loglog_slope(h, f);
  out.slope_G_strong = detail::loglog_slope(h, gs);
  out.slope_G_weak = detail::loglog_slope(h, gw);
  return out;
}

}  // namespace mfg
