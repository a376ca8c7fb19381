#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/functions.hpp"
#include "mfg/grid.hpp"

namespace mfg {

class ProblemError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Coupling term V[m] on the right of the HJB equation, or V0[m] in the
/// initial condition.
struct Coupling {
  enum class Kind { Zero, LocalPower, Nonlocal };
  Kind kind = Kind::Zero;
  double q = 2.0;  // LocalPower exponent

  // Nonlocal kernel K(x, y) = sum_k scale_k * f_k(x) * f_k(y), symmetric by
  // construction. `general` overrides it when set; it is applied densely.
  std::vector<double> scales;
  std::vector<TrigPoly> profiles;
  std::function<double(double, double, double, double)> general;

  static Coupling zero() { return {}; }
  static Coupling local_power(double q) {
    Coupling c;
    c.kind = Kind::LocalPower;
    c.q = q;
    return c;
  }
  static Coupling separable(double scale, TrigPoly profile) {
    Coupling c;
    c.kind = Kind::Nonlocal;
    c.scales = {scale};
    c.profiles = {std::move(profile)};
    return c;
  }
  static Coupling kernel(std::function<double(double, double, double, double)> k) {
    Coupling c;
    c.kind = Kind::Nonlocal;
    c.general = std::move(k);
    return c;
  }

  /// K(x, y) for points x = (x1, x2), y = (y1, y2).
  double kernel_at(double x1, double x2, double y1, double y2) const {
    if (general) return general(x1, x2, y1, y2);
    double s = 0.0;
    for (std::size_t k = 0; k < scales.size(); ++k)
      s += scales[k] * profiles[k](x1, x2) * profiles[k](y1, y2);
    return s;
  }
};

/// Continuous problem: u_t - nu Lap u + phi(x) + |grad u|^gamma = V[m] forward
/// in time with u(0) = u0 + V0[m(0)], and the adjoint Fokker-Planck equation
/// backward in time with m(T) = mT, on the periodic unit cell.
struct ProblemSpec {
  int dim = 1;
  double nu = 1.0;
  double gamma = 2.0;
  double T = 1.0;
  TrigPoly phi;
  Coupling V = Coupling::local_power(2.0);
  Coupling V0;
  TrigPoly u0;
  TrigPoly mT = TrigPoly::constant(1.0);

  void validate() const {
    if (dim != 1 && dim != 2) throw ProblemError("dimension must be 1 or 2");
    if (!(nu > 0.0)) throw ProblemError("diffusion coefficient must be positive");
    if (!(gamma >= 0.0)) throw ProblemError("Hamiltonian exponent must be nonnegative");
    // below 1 the gradient term is not differentiable at the origin; 0 makes it constant
    if (gamma > 0.0 && gamma < 1.0) throw ProblemError("Hamiltonian exponent must be 0 or at least 1");
    if (!(T > 0.0)) throw ProblemError("end time must be positive");
    if (V0.kind == Coupling::Kind::Nonlocal)
      throw ProblemError("initial coupling must be zero or a local power");
    if (dim == 1) {
      for (const TrigPoly* f : {&phi, &u0, &mT})
        if (!f->one_dimensional()) throw ProblemError("1D problem uses a y-dependent function");
      for (const auto& p : V.profiles)
        if (!p.one_dimensional()) throw ProblemError("1D problem uses a y-dependent kernel");
    }
    if (V.kind == Coupling::Kind::Nonlocal && V.general) {
      // symmetry probe on a fixed set of point pairs
      const double pts[][4] = {{0.1, 0.7, 0.35, 0.2}, {0.9, 0.05, 0.5, 0.5}, {0.25, 0.3, 0.8, 0.6}};
      for (const auto& p : pts) {
        const double y1 = dim == 1 ? 0.0 : p[1], y2 = dim == 1 ? 0.0 : p[3];
        const double a = V.kernel_at(p[0], y1, p[2], y2), b = V.kernel_at(p[2], y2, p[0], y1);
        if (std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(a)))
          throw ProblemError("nonlocal kernel is not symmetric");
      }
    }
  }

  /// Checks the terminal density on a grid: nonnegative with unit mass.
  void validate_on(const LevelGrid& g) const {
    const GridFn m = sample(mT, g);
    for (double v : m.values())
      if (v < 0.0) throw ProblemError("terminal density is negative on the grid");
    const double mass = total_mass(m);
    if (std::abs(mass - 1.0) > 1e-12)
      throw ProblemError("terminal density has mass " + std::to_string(mass) + ", expected 1");
  }
};

inline std::vector<LevelGrid> build_hierarchy(const ProblemSpec& spec, int L0, int L,
                                              const GridOptions& opt = {}) {
  return build_hierarchy(spec.dim, spec.T, L0, L, opt);
}

}  // namespace mfg
