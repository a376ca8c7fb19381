#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace mfg {

/// Raised for malformed grids, mismatched grids and invalid level ranges.
class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline int wrap_index(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

/// One level of the space-time hierarchy on the periodic unit cell [0,1)^d.
///
/// The spatial grid has `n` points per axis (x_i = i*h, h = 1/n) and the
/// time interval [0,T] is split into `nt` steps (t_k = k*tau). Points of a
/// 2D grid are stored row-major: p = i1*n + i2, where i1 indexes the first
/// axis.
struct LevelGrid {
  int dim = 1;
  int level = -1;  // informational; -1 for grids built outside a hierarchy
  int n = 0;
  int nt = 0;
  double T = 1.0;

  static LevelGrid make(int dim, int n, int nt, double T, int level = -1) {
    if (dim != 1 && dim != 2) throw GridError("grid dimension must be 1 or 2");
    if (n < 2) throw GridError("grid needs at least 2 points per axis");
    if (nt < 1) throw GridError("grid needs at least one time step");
    if (!(T > 0.0) || !std::isfinite(T)) throw GridError("end time must be positive");
    return LevelGrid{dim, level, n, nt, T};
  }

  double h() const { return 1.0 / n; }
  double tau() const { return T / nt; }
  /// h^d, the rectangle-rule weight of one grid point.
  double cell() const { return dim == 1 ? h() : h() * h(); }
  std::size_t points() const {
    return dim == 1 ? static_cast<std::size_t>(n) : static_cast<std::size_t>(n) * n;
  }
  std::size_t frames() const { return static_cast<std::size_t>(nt) + 1; }
  double t(int k) const { return k * tau(); }

  /// Coordinates of point p; the second coordinate is 0 in 1D.
  std::pair<double, double> coords(std::size_t p) const {
    if (dim == 1) return {static_cast<double>(p) * h(), 0.0};
    const auto i1 = p / static_cast<std::size_t>(n);
    const auto i2 = p % static_cast<std::size_t>(n);
    return {static_cast<double>(i1) * h(), static_cast<double>(i2) * h()};
  }

  /// Index of the point shifted by `offset` along `axis`, with periodic wrap.
  std::size_t shift(std::size_t p, int axis, int offset) const {
    if (dim == 1) return static_cast<std::size_t>(wrap_index(static_cast<int>(p) + offset, n));
    int i1 = static_cast<int>(p / static_cast<std::size_t>(n));
    int i2 = static_cast<int>(p % static_cast<std::size_t>(n));
    if (axis == 0)
      i1 = wrap_index(i1 + offset, n);
    else
      i2 = wrap_index(i2 + offset, n);
    return static_cast<std::size_t>(i1) * n + i2;
  }

  /// Same spatial and temporal resolution (the level tag is ignored).
  bool same_mesh(const LevelGrid& o) const {
    return dim == o.dim && n == o.n && nt == o.nt && T == o.T;
  }

  /// True when `fine` refines this grid by exactly 2 in space and time.
  bool refined_by(const LevelGrid& fine) const {
    return dim == fine.dim && fine.n == 2 * n && fine.nt == 2 * nt && T == fine.T;
  }
};

/// Level convention: N = base * 2^l, N_t = time_base * 2^l. The default
/// (1, 1) gives the plain dyadic hierarchy with tau = 2^-l T.
struct GridOptions {
  int base = 1;
  int time_base = 1;
};

inline LevelGrid level_grid(int dim, int level, double T, const GridOptions& opt = {}) {
  if (level < 0 || level > 30) throw GridError("level out of range");
  if (opt.base < 1 || opt.time_base < 1) throw GridError("grid bases must be positive");
  return LevelGrid::make(dim, opt.base << level, opt.time_base << level, T, level);
}

inline std::vector<LevelGrid> build_hierarchy(int dim, double T, int L0, int L,
                                              const GridOptions& opt = {}) {
  if (L0 < 2 || L0 > L)
    throw GridError("invalid level range [" + std::to_string(L0) + ", " + std::to_string(L) +
                    "]: need 2 <= L0 <= L");
  std::vector<LevelGrid> out;
  out.reserve(static_cast<std::size_t>(L - L0 + 1));
  for (int l = L0; l <= L; ++l) out.push_back(level_grid(dim, l, T, opt));
  return out;
}

/// A real function sampled on one spatial grid at one time level.
class GridFn {
 public:
  GridFn() = default;
  explicit GridFn(const LevelGrid& g, double fill = 0.0) : grid_(g), values_(g.points(), fill) {}
  GridFn(const LevelGrid& g, std::vector<double> values) : grid_(g), values_(std::move(values)) {
    if (values_.size() != g.points()) throw GridError("grid function length does not match grid");
    for (double v : values_)
      if (!std::isfinite(v)) throw GridError("grid function holds a non-finite value");
  }

  const LevelGrid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  LevelGrid grid_{};
  std::vector<double> values_;
};

/// The full space-time solution on one level: frames n = 0..N_t, stored
/// contiguously frame after frame.
class FieldSeries {
 public:
  FieldSeries() = default;
  explicit FieldSeries(const LevelGrid& g, double fill = 0.0)
      : grid_(g), data_(g.frames() * g.points(), fill) {}
  FieldSeries(const LevelGrid& g, std::vector<double> data) : grid_(g), data_(std::move(data)) {
    if (data_.size() != g.frames() * g.points())
      throw GridError("field series length does not match grid");
  }

  /// Every frame equal to `frame` (the naive initial guess when frame = m_T).
  static FieldSeries constant_in_time(const GridFn& frame) {
    FieldSeries out(frame.grid());
    for (int k = 0; k <= frame.grid().nt; ++k) out.set_frame(k, frame.values());
    return out;
  }

  const LevelGrid& grid() const { return grid_; }
  std::size_t frame_size() const { return grid_.points(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::span<double> frame(int k) {
    return std::span<double>(data_).subspan(static_cast<std::size_t>(k) * frame_size(),
                                            frame_size());
  }
  std::span<const double> frame(int k) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(k) * frame_size(),
                                                  frame_size());
  }
  GridFn frame_fn(int k) const {
    auto f = frame(k);
    return GridFn(grid_, std::vector<double>(f.begin(), f.end()));
  }
  void set_frame(int k, std::span<const double> values) {
    if (values.size() != frame_size()) throw GridError("frame length does not match grid");
    std::copy(values.begin(), values.end(), frame(k).begin());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  LevelGrid grid_{};
  std::vector<double> data_;
};

/// Samples f at every grid point. `f` is called as f(x) in 1D and f(x, y) in
/// 2D; a two-argument callable is also accepted in 1D and receives y = 0.
template <class F>
GridFn sample(F&& f, const LevelGrid& g) {
  std::vector<double> v(g.points());
  for (std::size_t p = 0; p < v.size(); ++p) {
    const auto [x, y] = g.coords(p);
    double value;
    if constexpr (std::is_invocable_r_v<double, F, double, double>) {
      value = f(x, y);
    } else {
      if (g.dim != 1) throw GridError("one-argument function sampled on a 2D grid");
      value = f(x);
    }
    if (!std::isfinite(value))
      throw GridError("non-finite sample at x=" + std::to_string(x) +
                      (g.dim == 2 ? ", y=" + std::to_string(y) : std::string()));
    v[p] = value;
  }
  return GridFn(g, std::move(v));
}

namespace detail {
inline double sum_squares(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}
}  // namespace detail

/// sqrt(tau h^d sum X^2): mesh-consistent L2 norm over space and time.
inline double norm(const FieldSeries& X) {
  const auto& g = X.grid();
  return std::sqrt(g.tau() * g.cell() * detail::sum_squares(X.data()));
}

/// ||X_new - X_old|| / ||X_old||, +inf when X_old vanishes but the difference
/// does not, 0 when both vanish.
inline double rel_norm(const FieldSeries& x_new, const FieldSeries& x_old) {
  if (!x_new.grid().same_mesh(x_old.grid())) throw GridError("rel_norm: grid mismatch");
  auto a = x_new.data();
  auto b = x_old.data();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  if (den == 0.0) return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return std::sqrt(num / den);
}

inline double total_mass(std::span<const double> m, const LevelGrid& g) {
  double s = 0.0;
  for (double v : m) s += v;
  return g.cell() * s;
}

inline double total_mass(const GridFn& m) { return total_mass(m.values(), m.grid()); }

}  // namespace mfg
