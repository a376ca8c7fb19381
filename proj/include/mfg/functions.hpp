#pragma once

#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mfg {

class CatalogError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A trigonometric polynomial on the periodic unit cell:
///   f(x, y) = sum_k a_k * bx_k(2 pi kx_k x) * by_k(2 pi ky_k y)
/// with each basis factor one of {1, cos, sin}. Every input function the
/// solver ships with is of this form.
class TrigPoly {
 public:
  enum class Basis { One, Cos, Sin };
  struct Term {
    double a = 0.0;
    Basis bx = Basis::One;
    double kx = 0.0;
    Basis by = Basis::One;
    double ky = 0.0;
  };

  TrigPoly() = default;
  explicit TrigPoly(std::vector<Term> terms) : terms_(std::move(terms)) {}

  static TrigPoly constant(double c) { return TrigPoly(std::vector<TrigPoly::Term>{{c}}); }

  TrigPoly& operator+=(const TrigPoly& o) {
    terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
    return *this;
  }
  friend TrigPoly operator+(TrigPoly a, const TrigPoly& b) { return a += b; }
  TrigPoly scaled(double c) const {
    TrigPoly out = *this;
    for (auto& t : out.terms_) t.a *= c;
    return out;
  }

  const std::vector<Term>& terms() const { return terms_; }
  bool empty() const { return terms_.empty(); }
  /// True when no term depends on y.
  bool one_dimensional() const {
    for (const auto& t : terms_)
      if (t.by != Basis::One) return false;
    return true;
  }

  double operator()(double x, double y = 0.0) const { return eval(x, y, 0, 0); }

  /// Mixed partial derivative d^(dx+dy) f / dx^dx dy^dy.
  double eval(double x, double y, int dx, int dy) const {
    double s = 0.0;
    for (const auto& t : terms_) s += t.a * factor(t.bx, t.kx, x, dx) * factor(t.by, t.ky, y, dy);
    return s;
  }

 private:
  static double factor(Basis b, double k, double x, int d) {
    const double w = 2.0 * std::numbers::pi * k;
    if (b == Basis::One) return d == 0 ? 1.0 : 0.0;
    // derivatives cycle cos -> -sin -> -cos -> sin; sin enters at position 3
    const int phase = (b == Basis::Sin ? 3 : 0) + d;
    const double arg = w * x;
    const double amp = std::pow(w, d);
    switch (phase % 4) {
      case 0: return amp * std::cos(arg);
      case 1: return -amp * std::sin(arg);
      case 2: return -amp * std::cos(arg);
      default: return amp * std::sin(arg);
    }
  }

  std::vector<Term> terms_;
};

namespace catalog {

using B = TrigPoly::Basis;

inline TrigPoly cos_x(double a, double k) { return TrigPoly(std::vector<TrigPoly::Term>{{a, B::Cos, k}}); }
inline TrigPoly sin_x(double a, double k) { return TrigPoly(std::vector<TrigPoly::Term>{{a, B::Sin, k}}); }
inline TrigPoly cos_y(double a, double k) { return TrigPoly(std::vector<TrigPoly::Term>{{a, B::One, 0, B::Cos, k}}); }
inline TrigPoly sin_y(double a, double k) { return TrigPoly(std::vector<TrigPoly::Term>{{a, B::One, 0, B::Sin, k}}); }

// Named presets used by the shipped experiment configs.
inline TrigPoly potential_1d() { return cos_x(-200, 1) + cos_x(10, 2); }
inline TrigPoly potential_2d() { return cos_x(1, 2) + sin_x(1, 1) + sin_y(1, 1); }
inline TrigPoly density_1d() { return TrigPoly::constant(1) + cos_x(0.5, 1); }
inline TrigPoly density_2d() { return TrigPoly::constant(1) + cos_x(0.5, 1) + cos_y(0.5, 1); }

namespace detail {
inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<double> parse_args(std::string_view args, std::string_view ctx) {
  std::vector<double> out;
  args = trim(args);
  if (args.empty()) return out;
  std::size_t pos = 0;
  while (pos <= args.size()) {
    const auto comma = args.find(',', pos);
    const auto piece = trim(args.substr(pos, comma == std::string_view::npos ? args.npos : comma - pos));
    try {
      std::size_t used = 0;
      const std::string s(piece);
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      out.push_back(v);
    } catch (const std::exception&) {
      throw CatalogError("bad numeric argument '" + std::string(piece) + "' in '" +
                         std::string(ctx) + "'");
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline void expect_args(const std::vector<double>& a, std::size_t n, std::string_view name) {
  if (a.size() != n)
    throw CatalogError(std::string(name) + " takes " + std::to_string(n) + " argument(s), got " +
                       std::to_string(a.size()));
}

inline TrigPoly term(std::string_view text) {
  text = trim(text);
  std::string_view name = text;
  std::vector<double> a;
  if (const auto open = text.find('('); open != std::string_view::npos) {
    if (text.back() != ')') throw CatalogError("unbalanced parentheses in '" + std::string(text) + "'");
    name = trim(text.substr(0, open));
    a = parse_args(text.substr(open + 1, text.size() - open - 2), text);
  }
  const std::string n(name);
  if (n == "zero") return expect_args(a, 0, n), TrigPoly{};
  if (n == "const") return expect_args(a, 1, n), TrigPoly::constant(a[0]);
  if (n == "cos") return expect_args(a, 2, n), cos_x(a[0], a[1]);
  if (n == "sin") return expect_args(a, 2, n), sin_x(a[0], a[1]);
  if (n == "cos_y") return expect_args(a, 2, n), cos_y(a[0], a[1]);
  if (n == "sin_y") return expect_args(a, 2, n), sin_y(a[0], a[1]);
  if (n == "cos_cos") return expect_args(a, 3, n), TrigPoly(std::vector<TrigPoly::Term>{{a[0], B::Cos, a[1], B::Cos, a[2]}});
  if (n == "sin_sin") return expect_args(a, 3, n), TrigPoly(std::vector<TrigPoly::Term>{{a[0], B::Sin, a[1], B::Sin, a[2]}});
  if (n == "cos_sin") return expect_args(a, 3, n), TrigPoly(std::vector<TrigPoly::Term>{{a[0], B::Cos, a[1], B::Sin, a[2]}});
  if (n == "sin_cos") return expect_args(a, 3, n), TrigPoly(std::vector<TrigPoly::Term>{{a[0], B::Sin, a[1], B::Cos, a[2]}});
  if (n == "potential_1d") return expect_args(a, 0, n), potential_1d();
  if (n == "potential_2d") return expect_args(a, 0, n), potential_2d();
  if (n == "density_1d") return expect_args(a, 0, n), density_1d();
  if (n == "density_2d") return expect_args(a, 0, n), density_2d();
  throw CatalogError("unknown catalog function '" + n + "'");
}
}  // namespace detail

/// Parses a '+'-separated sum of catalog terms, e.g.
///   "sin(1, 2) + cos(0.1, 5)"  ->  sin(4 pi x) + 0.1 cos(10 pi x)
/// Terms: zero, const(c), cos(a,k), sin(a,k), cos_y(a,k), sin_y(a,k),
/// cos_cos(a,k,l), sin_sin(a,k,l), cos_sin(a,k,l), sin_cos(a,k,l) and the
/// presets potential_1d, potential_2d, density_1d, density_2d. Frequencies k
/// are in cycles per unit length. Negative amplitudes are written in the
/// argument list; a literal '-' between terms is not accepted.
inline TrigPoly parse(std::string_view text) {
  TrigPoly out;
  int depth = 0;
  std::size_t start = 0;
  bool any = false;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    const char c = i < text.size() ? text[i] : '+';
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth < 0) throw CatalogError("unbalanced parentheses in '" + std::string(text) + "'");
    if (c == '+' && depth == 0) {
      const auto piece = detail::trim(text.substr(start, i - start));
      if (piece.empty()) throw CatalogError("empty term in '" + std::string(text) + "'");
      out += detail::term(piece);
      any = true;
      start = i + 1;
    }
  }
  if (depth != 0) throw CatalogError("unbalanced parentheses in '" + std::string(text) + "'");
  if (!any) throw CatalogError("empty function expression");
  return out;
}

}  // namespace catalog
}  // namespace mfg
