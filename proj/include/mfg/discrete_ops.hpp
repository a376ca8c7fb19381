#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfg/grid.hpp"
#include "mfg/problem.hpp"

namespace mfg {

enum class SchemeOrder { First, Second };

inline const char* to_string(SchemeOrder o) { return o == SchemeOrder::First ? "first" : "second"; }

/// A one-sided difference stencil along one axis: sum_k coef[k] * W[i + off[k]].
struct Stencil {
  int size = 0;
  std::array<int, 3> off{};
  std::array<double, 3> coef{};
};

/// Slot s = 2*axis + side, side 0 = minus (backward), 1 = plus (forward).
inline Stencil slot_stencil(SchemeOrder order, int side, double h) {
  if (order == SchemeOrder::Second) {
    const double c = 1.0 / (2.0 * h);
    if (side == 0) return {3, {0, -1, -2}, {3 * c, -4 * c, c}};
    return {3, {0, 1, 2}, {-3 * c, 4 * c, -c}};
  }
  const double c = 1.0 / h;
  if (side == 0) return {2, {0, -1, 0}, {c, -c, 0}};
  return {2, {0, 1, 0}, {-c, c, 0}};
}

inline int min_points(SchemeOrder order) { return order == SchemeOrder::Second ? 4 : 2; }

/// One-sided differences of a grid function: minus[a] and plus[a] per axis a.
struct OneSidedPair {
  int dim = 1;
  std::array<std::vector<double>, 2> minus;
  std::array<std::vector<double>, 2> plus;

  const std::vector<double>& slot(int s) const { return s % 2 == 0 ? minus[s / 2] : plus[s / 2]; }
  std::vector<double>& slot(int s) { return s % 2 == 0 ? minus[s / 2] : plus[s / 2]; }
};

namespace detail {

inline void check_size(const LevelGrid& g, SchemeOrder order) {
  if (g.n < min_points(order))
    throw GridError("grid with N=" + std::to_string(g.n) + " is too small for the " +
                    to_string(order) + "-order stencil");
}

/// out[i] = sum_k coef[k] * w[shift(i, axis, off[k])]. Fast paths for 1D and
/// for the inner axis of 2D keep the index arithmetic out of the hot loop.
inline void apply_stencil(const LevelGrid& g, const Stencil& st, int axis,
                          std::span<const double> w, std::span<double> out) {
  const int n = g.n;
  if (g.dim == 1 || axis == 1) {
    const int rows = g.dim == 1 ? 1 : n;
    for (int r = 0; r < rows; ++r) {
      const double* wr = w.data() + static_cast<std::size_t>(r) * n;
      double* o = out.data() + static_cast<std::size_t>(r) * n;
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < st.size; ++k) s += st.coef[k] * wr[wrap_index(i + st.off[k], n)];
        o[i] = s;
      }
    }
    return;
  }
  for (int i1 = 0; i1 < n; ++i1) {
    double* o = out.data() + static_cast<std::size_t>(i1) * n;
    std::fill(o, o + n, 0.0);
    for (int k = 0; k < st.size; ++k) {
      const double* wr = w.data() + static_cast<std::size_t>(wrap_index(i1 + st.off[k], n)) * n;
      const double c = st.coef[k];
      for (int i2 = 0; i2 < n; ++i2) o[i2] += c * wr[i2];
    }
  }
}

/// out[shift(i, axis, off[k])] += coef[k] * v[i]: the transpose of apply_stencil.
inline void apply_stencil_transpose_add(const LevelGrid& g, const Stencil& st, int axis,
                                        std::span<const double> v, std::span<double> out) {
  const int n = g.n;
  if (g.dim == 1 || axis == 1) {
    const int rows = g.dim == 1 ? 1 : n;
    for (int r = 0; r < rows; ++r) {
      const double* vr = v.data() + static_cast<std::size_t>(r) * n;
      double* o = out.data() + static_cast<std::size_t>(r) * n;
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < st.size; ++k) o[wrap_index(i + st.off[k], n)] += st.coef[k] * vr[i];
    }
    return;
  }
  for (int i1 = 0; i1 < n; ++i1) {
    const double* vr = v.data() + static_cast<std::size_t>(i1) * n;
    for (int k = 0; k < st.size; ++k) {
      double* o = out.data() + static_cast<std::size_t>(wrap_index(i1 + st.off[k], n)) * n;
      const double c = st.coef[k];
      for (int i2 = 0; i2 < n; ++i2) o[i2] += c * vr[i2];
    }
  }
}

}  // namespace detail

inline OneSidedPair one_sided(std::span<const double> w, const LevelGrid& g, SchemeOrder order) {
  detail::check_size(g, order);
  OneSidedPair p;
  p.dim = g.dim;
  for (int s = 0; s < 2 * g.dim; ++s) {
    auto& out = p.slot(s);
    out.assign(g.points(), 0.0);
    detail::apply_stencil(g, slot_stencil(order, s % 2, g.h()), s / 2, w, out);
  }
  return p;
}

inline OneSidedPair beam_warming(const GridFn& w) {
  return one_sided(w.values(), w.grid(), SchemeOrder::Second);
}
inline OneSidedPair upwind_first(const GridFn& w) {
  return one_sided(w.values(), w.grid(), SchemeOrder::First);
}

/// out = L w with L = -nu * (central second difference), summed over axes.
inline void laplace_apply(const LevelGrid& g, double nu, std::span<const double> w,
                          std::span<double> out) {
  const int n = g.n;
  const double c = nu / (g.h() * g.h());
  if (g.dim == 1) {
    for (int i = 0; i < n; ++i)
      out[i] = -c * (w[wrap_index(i + 1, n)] - 2.0 * w[i] + w[wrap_index(i - 1, n)]);
    return;
  }
  for (int i1 = 0; i1 < n; ++i1) {
    const double* up = w.data() + static_cast<std::size_t>(wrap_index(i1 - 1, n)) * n;
    const double* mid = w.data() + static_cast<std::size_t>(i1) * n;
    const double* dn = w.data() + static_cast<std::size_t>(wrap_index(i1 + 1, n)) * n;
    double* o = out.data() + static_cast<std::size_t>(i1) * n;
    for (int i2 = 0; i2 < n; ++i2) {
      const double l = mid[i2 == 0 ? n - 1 : i2 - 1], r = mid[i2 == n - 1 ? 0 : i2 + 1];
      o[i2] = -c * (up[i2] + dn[i2] + l + r - 4.0 * mid[i2]);
    }
  }
}

inline GridFn laplace_term(const GridFn& w, double nu) {
  if (w.grid().n < 3) throw GridError("Laplacian needs at least 3 points per axis");
  GridFn out(w.grid());
  laplace_apply(w.grid(), nu, w.values(), out.values());
  return out;
}

/// Monotone discrete Hamiltonian H_i = phi_i + s_i^gamma with
///   s^2 = sum_axes max(minus, 0)^2 + max(-plus, 0)^2,
/// together with its partials g_s = dH/d(slot s):
///   dH/dminus = gamma s^(gamma-2) max(minus, 0),
///   dH/dplus  = -gamma s^(gamma-2) max(-plus, 0).
/// Both partials vanish at s = 0; for gamma < 2 the factor uses max(s, 1e-12).
struct HamiltonianEval {
  std::vector<double> H;
  std::array<std::vector<double>, 4> g;  // indexed by slot
};

inline constexpr double kHamiltonianFloor = 1e-12;

namespace detail {
/// Active part a_s >= 0 of slot s and its sign sigma_s with dH/dslot = gamma s^(gamma-2) sigma a.
inline void slot_activity(int s, double p, double& a, double& sigma) {
  if (s % 2 == 0) {
    a = std::max(p, 0.0);
    sigma = 1.0;
  } else {
    a = std::max(-p, 0.0);
    sigma = -1.0;
  }
}
}  // namespace detail

inline HamiltonianEval evaluate_hamiltonian(const OneSidedPair& pair, std::span<const double> phi,
                                            double gamma, bool with_gradient = true) {
  const int slots = 2 * pair.dim;
  const std::size_t P = pair.minus[0].size();
  if (with_gradient && gamma > 0.0 && gamma < 1.0)
    throw std::invalid_argument("Hamiltonian gradient needs gamma = 0 or gamma >= 1");
  HamiltonianEval e;
  e.H.resize(P);
  if (with_gradient)
    for (int s = 0; s < slots; ++s) e.g[s].resize(P);
  const bool quadratic = gamma == 2.0;
  for (std::size_t i = 0; i < P; ++i) {
    double a[4], sig[4], s2 = 0.0;
    for (int s = 0; s < slots; ++s) {
      detail::slot_activity(s, pair.slot(s)[i], a[s], sig[s]);
      s2 += a[s] * a[s];
    }
    const double base = phi.empty() ? 0.0 : phi[i];
    if (quadratic) {
      e.H[i] = base + s2;
      if (with_gradient)
        for (int s = 0; s < slots; ++s) e.g[s][i] = 2.0 * sig[s] * a[s];
      continue;
    }
    const double sn = std::sqrt(s2);
    e.H[i] = base + std::pow(sn, gamma);
    if (!with_gradient) continue;
    if (sn == 0.0) {
      for (int s = 0; s < slots; ++s) e.g[s][i] = 0.0;
      continue;
    }
    const double f = gamma * std::pow(gamma < 2.0 ? std::max(sn, kHamiltonianFloor) : sn, gamma - 2.0);
    for (int s = 0; s < slots; ++s) e.g[s][i] = f * sig[s] * a[s];
  }
  return e;
}

inline GridFn discrete_hamiltonian(const LevelGrid& g, const OneSidedPair& pair,
                                   const TrigPoly& phi, double gamma) {
  const GridFn ph = sample(phi, g);
  return GridFn(g, evaluate_hamiltonian(pair, ph.values(), gamma, false).H);
}

/// Per-slot partials dH/dslot as grid functions (slot = 2*axis + side).
inline std::vector<GridFn> hamiltonian_gradient(const LevelGrid& g, const OneSidedPair& pair,
                                                double gamma) {
  if (gamma > 0.0 && gamma < 1.0) throw std::invalid_argument("Hamiltonian gradient needs gamma = 0 or gamma >= 1");
  auto e = evaluate_hamiltonian(pair, {}, gamma, true);
  std::vector<GridFn> out;
  for (int s = 0; s < 2 * g.dim; ++s) out.emplace_back(g, std::move(e.g[s]));
  return out;
}

/// Second partials d^2H/dslot_c dslot_d at point i, row-major slots x slots.
///   gamma (gamma-2) s^(gamma-4) (sigma_c a_c)(sigma_d a_d) + gamma s^(gamma-2) [c==d, a_c>0]
inline void hamiltonian_hessian_at(const OneSidedPair& pair, std::size_t i, double gamma,
                                   double* out) {
  const int slots = 2 * pair.dim;
  double a[4], sig[4], s2 = 0.0;
  for (int s = 0; s < slots; ++s) {
    detail::slot_activity(s, pair.slot(s)[i], a[s], sig[s]);
    s2 += a[s] * a[s];
  }
  std::fill(out, out + slots * slots, 0.0);
  if (s2 == 0.0) return;
  double sn = std::sqrt(s2);
  if (gamma < 2.0) sn = std::max(sn, kHamiltonianFloor);
  const double f2 = gamma == 2.0 ? 2.0 : gamma * std::pow(sn, gamma - 2.0);
  const double f4 = gamma == 2.0 ? 0.0 : gamma * (gamma - 2.0) * std::pow(sn, gamma - 4.0);
  for (int c = 0; c < slots; ++c)
    for (int d = 0; d < slots; ++d) {
      double v = f4 * sig[c] * a[c] * sig[d] * a[d];
      if (c == d && a[c] > 0.0) v += f2;
      out[c * slots + d] = v;
    }
}

/// Linearization of the discrete Hamiltonian at one frame u:
///   J(u) w = sum_s g_s * (S_s w),
/// where S_s is the one-sided stencil of slot s. The KFP transport uses the
/// transpose, and B(m, u) = -J(u)^T m.
class Linearization {
 public:
  Linearization() = default;
  Linearization(const LevelGrid& g, SchemeOrder order, std::span<const double> u,
                std::span<const double> phi, double gamma)
      : grid_(g), order_(order), pair_(one_sided(u, g, order)) {
    auto e = evaluate_hamiltonian(pair_, phi, gamma, true);
    H_ = std::move(e.H);
    for (int s = 0; s < 2 * g.dim; ++s) g_[s] = std::move(e.g[s]);
  }

  const LevelGrid& grid() const { return grid_; }
  SchemeOrder order() const { return order_; }
  const OneSidedPair& pair() const { return pair_; }
  const std::vector<double>& H() const { return H_; }
  const std::vector<double>& g(int slot) const { return g_[slot]; }
  int slots() const { return 2 * grid_.dim; }

  /// out = J w
  void apply(std::span<const double> w, std::span<double> out) const {
    std::vector<double> tmp(grid_.points());
    std::fill(out.begin(), out.end(), 0.0);
    for (int s = 0; s < slots(); ++s) {
      detail::apply_stencil(grid_, slot_stencil(order_, s % 2, grid_.h()), s / 2, w, tmp);
      const auto& gs = g_[s];
      for (std::size_t i = 0; i < tmp.size(); ++i) out[i] += gs[i] * tmp[i];
    }
  }

  /// out = J^T m
  void apply_transpose(std::span<const double> m, std::span<double> out) const {
    std::vector<double> tmp(grid_.points());
    std::fill(out.begin(), out.end(), 0.0);
    for (int s = 0; s < slots(); ++s) {
      const auto& gs = g_[s];
      for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = gs[i] * m[i];
      detail::apply_stencil_transpose_add(grid_, slot_stencil(order_, s % 2, grid_.h()), s / 2,
                                          tmp, out);
    }
  }

 private:
  LevelGrid grid_{};
  SchemeOrder order_ = SchemeOrder::Second;
  OneSidedPair pair_;
  std::vector<double> H_;
  std::array<std::vector<double>, 4> g_;
};

/// Discrete divergence B(m, u) = -J(u)^T m. It satisfies
///   sum_i B_i w_i = -sum_i m_i (grad_p H . D w)_i   for every w,
/// and sum_i B_i = 0 because every one-sided stencil annihilates constants.
inline GridFn transport_B(const GridFn& m, const GridFn& u, SchemeOrder order, double gamma) {
  if (!m.grid().same_mesh(u.grid())) throw GridError("transport_B: grid mismatch");
  const Linearization lin(u.grid(), order, u.values(), {}, gamma);
  GridFn out(u.grid());
  lin.apply_transpose(m.values(), out.values());
  for (double& v : out.values()) v = -v;
  return out;
}

/// Applies a coupling to one density frame, out = V[m].
inline void coupling_apply(const Coupling& c, const LevelGrid& g, std::span<const double> m,
                           std::span<double> out) {
  switch (c.kind) {
    case Coupling::Kind::Zero:
      std::fill(out.begin(), out.end(), 0.0);
      return;
    case Coupling::Kind::LocalPower:
      if (c.q == 2.0) {
        for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] * m[i];
      } else if (c.q == 1.0) {
        std::copy(m.begin(), m.end(), out.begin());
      } else if (c.q == std::floor(c.q)) {
        for (std::size_t i = 0; i < m.size(); ++i) out[i] = std::pow(m[i], c.q);
      } else {
        for (std::size_t i = 0; i < m.size(); ++i) out[i] = std::pow(std::max(m[i], 0.0), c.q);
      }
      return;
    case Coupling::Kind::Nonlocal: {
      const double w = g.cell();
      const std::size_t P = g.points();
      if (!c.general) {
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t k = 0; k < c.scales.size(); ++k) {
          const GridFn f = sample(c.profiles[k], g);
          double dot = 0.0;
          for (std::size_t j = 0; j < P; ++j) dot += f[j] * m[j];
          const double amp = c.scales[k] * w * dot;
          for (std::size_t i = 0; i < P; ++i) out[i] += amp * f[i];
        }
        return;
      }
      for (std::size_t i = 0; i < P; ++i) {
        const auto [x1, x2] = g.coords(i);
        double s = 0.0;
        for (std::size_t j = 0; j < P; ++j) {
          const auto [y1, y2] = g.coords(j);
          s += c.kernel_at(x1, x2, y1, y2) * m[j];
        }
        out[i] = w * s;
      }
      return;
    }
  }
}

inline GridFn coupling_V(const GridFn& m, const Coupling& c) {
  GridFn out(m.grid());
  coupling_apply(c, m.grid(), m.values(), out.values());
  return out;
}

/// Dense Jacobian dV[m]/dm of one frame, row-major P x P. Local couplings
/// give a diagonal matrix.
inline std::vector<double> coupling_jacobian(const Coupling& c, const LevelGrid& g,
                                             std::span<const double> m) {
  const std::size_t P = g.points();
  std::vector<double> J(P * P, 0.0);
  switch (c.kind) {
    case Coupling::Kind::Zero:
      break;
    case Coupling::Kind::LocalPower:
      for (std::size_t i = 0; i < P; ++i) {
        double d;
        if (c.q == 2.0) d = 2.0 * m[i];
        else if (c.q == std::floor(c.q)) d = c.q * std::pow(m[i], c.q - 1.0);
        else d = m[i] > 0.0 ? c.q * std::pow(m[i], c.q - 1.0) : 0.0;
        J[i * P + i] = d;
      }
      break;
    case Coupling::Kind::Nonlocal:
      for (std::size_t i = 0; i < P; ++i) {
        const auto [x1, x2] = g.coords(i);
        for (std::size_t j = 0; j < P; ++j) {
          const auto [y1, y2] = g.coords(j);
          J[i * P + j] = g.cell() * c.kernel_at(x1, x2, y1, y2);
        }
      }
      break;
  }
  return J;
}

}  // namespace mfg
