#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/grid.hpp"

extern "C" {
void dgbtrf_(const int* m, const int* n, const int* kl, const int* ku, double* ab, const int* ldab,
             int* ipiv, int* info);
void dgbtrs_(const char* trans, const int* n, const int* kl, const int* ku, const int* nrhs,
             const double* ab, const int* ldab, const int* ipiv, double* b, const int* ldb,
             int* info, std::size_t trans_len);
}

namespace mfg {

/// A linear solve that could not meet its residual target.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double achieved)
      : std::runtime_error(what + " (relative residual " + std::to_string(achieved) + ")"),
        residual_(achieved) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Square N x N matrix whose nonzeros sit on the 2b+1 periodic diagonals
/// A(i, i+k mod N), k = -b..b. When N <= 2b two offsets can address the same
/// column; their entries then add.
class PeriodicBandMatrix {
 public:
  PeriodicBandMatrix() = default;
  PeriodicBandMatrix(int n, int b) : n_(n), b_(b), band_(static_cast<std::size_t>(2 * b + 1) * n, 0.0) {
    if (n < 1 || b < 0) throw std::invalid_argument("bad band matrix shape");
  }

  static PeriodicBandMatrix identity(int n, int b) {
    PeriodicBandMatrix A(n, b);
    for (int i = 0; i < n; ++i) A.diag(i, 0) = 1.0;
    return A;
  }

  int size() const { return n_; }
  int bandwidth() const { return b_; }

  /// Entry on diagonal k of row i, i.e. the coefficient of x[(i+k) mod N].
  double& diag(int i, int k) { return band_[static_cast<std::size_t>(k + b_) * n_ + i]; }
  double diag(int i, int k) const { return band_[static_cast<std::size_t>(k + b_) * n_ + i]; }

  /// A(i, j), summing coincident offsets.
  double operator()(int i, int j) const {
    double s = 0.0;
    for (int k = -b_; k <= b_; ++k)
      if (wrap_index(i + k, n_) == j) s += diag(i, k);
    return s;
  }

  void apply(std::span<const double> x, std::span<double> y) const {
    for (int i = 0; i < n_; ++i) {
      double s = 0.0;
      for (int k = -b_; k <= b_; ++k) s += diag(i, k) * x[wrap_index(i + k, n_)];
      y[i] = s;
    }
  }

  /// Exact transpose: A^T(i, i+k) = A(i+k, i).
  PeriodicBandMatrix transpose() const {
    PeriodicBandMatrix T(n_, b_);
    for (int i = 0; i < n_; ++i)
      for (int k = -b_; k <= b_; ++k) T.diag(i, k) = diag(wrap_index(i + k, n_), -k);
    return T;
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int k = -b_; k <= b_; ++k) D(i, wrap_index(i + k, n_)) += diag(i, k);
    return D;
  }

  bool operator==(const PeriodicBandMatrix&) const = default;

 private:
  int n_ = 0;
  int b_ = 0;
  std::vector<double> band_;
};

namespace detail {

inline double relative_residual(const PeriodicBandMatrix& A, std::span<const double> x,
                                std::span<const double> b, std::vector<double>& r) {
  r.resize(b.size());
  A.apply(x, r);
  for (std::size_t i = 0; i < b.size(); ++i) r[i] = b[i] - r[i];
  const double nb = norm2(b);
  return nb == 0.0 ? norm2(r) : norm2(r) / nb;
}

inline bool dense_solve(const PeriodicBandMatrix& A, std::span<const double> b, std::span<double> x) {
  const Eigen::MatrixXd D = A.to_dense();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(D);
  Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
  Eigen::VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite()) return false;
  std::copy(sol.data(), sol.data() + sol.size(), x.begin());
  return true;
}

/// Banded LU (LAPACK) on the non-wrapping part plus a rank-2b Woodbury
/// correction for the corner entries. Returns false when the band part is
/// singular or the capacitance matrix is.
inline bool band_woodbury_solve(const PeriodicBandMatrix& A, std::span<const double> b,
                                std::span<double> x) {
  const int n = A.size(), bw = A.bandwidth();
  const int kl = bw, ku = bw, ldab = 2 * kl + ku + 1;
  std::vector<double> ab(static_cast<std::size_t>(ldab) * n, 0.0);
  // corner rows: 0..bw-1 wrap to the right end, n-bw..n-1 wrap to the left
  const int r = 2 * bw;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(r, n);
  for (int i = 0; i < n; ++i)
    for (int k = -bw; k <= bw; ++k) {
      const double v = A.diag(i, k);
      if (v == 0.0) continue;
      const int j = i + k;
      if (j >= 0 && j < n) {
        ab[static_cast<std::size_t>(j) * ldab + (kl + ku + i - j)] = v;
      } else {
        const int row = i < bw ? i : bw + (i - (n - bw));
        C(row, wrap_index(j, n)) += v;
      }
    }
  std::vector<int> ipiv(n);
  int info = 0;
  dgbtrf_(&n, &n, &kl, &ku, ab.data(), &ldab, ipiv.data(), &info);
  if (info != 0) return false;

  const int nrhs = 1 + r;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, nrhs);
  for (int i = 0; i < n; ++i) rhs(i, 0) = b[i];
  for (int c = 0; c < r; ++c) rhs(c < bw ? c : n - bw + (c - bw), 1 + c) = 1.0;
  const char trans = 'N';
  dgbtrs_(&trans, &n, &kl, &ku, &nrhs, ab.data(), &ldab, ipiv.data(), rhs.data(), &n, &info, 1);
  if (info != 0) return false;

  const Eigen::VectorXd y = rhs.col(0);
  if (r == 0) {
    std::copy(y.data(), y.data() + n, x.begin());
    return y.allFinite();
  }
  const Eigen::MatrixXd Z = rhs.rightCols(r);
  const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(r, r) + C * Z;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(S);
  const Eigen::VectorXd corr = Z * lu.solve(C * y);
  const Eigen::VectorXd sol = y - corr;
  if (!sol.allFinite()) return false;
  std::copy(sol.data(), sol.data() + n, x.begin());
  return true;
}

}  // namespace detail

inline constexpr double kDefaultTol1D = 1e-12;
inline constexpr double kDefaultTol2D = 1e-10;

/// Solves A x = b with the contract ||A x - b||_2 <= tol ||b||_2, applying one
/// step of iterative refinement when the first solve misses it.
inline std::vector<double> solve(const PeriodicBandMatrix& A, std::span<const double> b,
                                 double tol = kDefaultTol1D) {
  if (!(tol > 0.0)) throw std::invalid_argument("solve: tolerance must be positive");
  if (static_cast<int>(b.size()) != A.size()) throw std::invalid_argument("solve: size mismatch");
  const int n = A.size();
  std::vector<double> x(n, 0.0);
  auto direct = [&](std::span<const double> rhs, std::span<double> out) {
    if (n > 2 * A.bandwidth() + 1 && detail::band_woodbury_solve(A, rhs, out)) return true;
    return detail::dense_solve(A, rhs, out);
  };
  std::vector<double> r;
  if (!direct(b, x)) throw SolverError("singular periodic band system", INFINITY);
  double res = detail::relative_residual(A, x, b, r);
  if (res > tol) {
    std::vector<double> dx(n);
    if (direct(r, dx)) {
      for (int i = 0; i < n; ++i) x[i] += dx[i];
      res = detail::relative_residual(A, x, b, r);
    }
  }
  if (!(res <= tol)) throw SolverError("periodic band solve missed its tolerance", res);
  return x;
}

/// Fourier solver for (I + c L) on a periodic N x N grid, L = -nu Lap_h. Used
/// as the preconditioner of the 2D iterative solver.
class FourierDiffusionSolver {
 public:
  FourierDiffusionSolver(const LevelGrid& g, double nu, double c)
      : n_(g.n), nc_(g.n / 2 + 1), real_(g.points()), spec_(static_cast<std::size_t>(g.n) * nc_) {
    if (g.dim != 2) throw std::invalid_argument("Fourier solver is 2D only");
    const double h2 = g.h() * g.h();
    eig_.resize(spec_.size());
    for (int k1 = 0; k1 < n_; ++k1) {
      const double s1 = std::sin(std::numbers::pi * k1 / n_);
      for (int k2 = 0; k2 < nc_; ++k2) {
        const double s2 = std::sin(std::numbers::pi * k2 / n_);
        eig_[static_cast<std::size_t>(k1) * nc_ + k2] =
            1.0 / ((1.0 + c * nu * 4.0 * (s1 * s1 + s2 * s2) / h2) * n_ * n_);
      }
    }
    fwd_ = fftw_plan_dft_r2c_2d(n_, n_, real_.data(), reinterpret_cast<fftw_complex*>(spec_.data()),
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd_ = fftw_plan_dft_c2r_2d(n_, n_, reinterpret_cast<fftw_complex*>(spec_.data()), real_.data(),
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  FourierDiffusionSolver(const FourierDiffusionSolver&) = delete;
  FourierDiffusionSolver& operator=(const FourierDiffusionSolver&) = delete;
  ~FourierDiffusionSolver() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  void apply(std::span<const double> in, std::span<double> out) {
    std::copy(in.begin(), in.end(), real_.begin());
    fftw_execute_dft_r2c(fwd_, real_.data(), reinterpret_cast<fftw_complex*>(spec_.data()));
    for (std::size_t k = 0; k < spec_.size(); ++k) spec_[k] *= eig_[k];
    fftw_execute_dft_c2r(bwd_, reinterpret_cast<fftw_complex*>(spec_.data()), real_.data());
    std::copy(real_.begin(), real_.end(), out.begin());
  }

 private:
  int n_, nc_;
  std::vector<double> real_;
  std::vector<std::complex<double>> spec_;
  std::vector<double> eig_;
  fftw_plan fwd_{};
  fftw_plan bwd_{};
};

struct IterativeResult {
  int iterations = 0;
  double residual = 0.0;
};

using LinearOp = std::function<void(std::span<const double>, std::span<double>)>;

/// Right-preconditioned BiCGSTAB. `x` holds the initial guess on entry.
/// Throws SolverError when ||A x - b|| <= tol ||b|| is not reached within
/// max_iter iterations.
inline IterativeResult bicgstab(const LinearOp& A, const LinearOp& M, std::span<const double> b,
                                std::span<double> x, double tol = kDefaultTol2D, int max_iter = 500) {
  const std::size_t n = b.size();
  std::vector<double> r(n), r0(n), p(n, 0.0), v(n, 0.0), s(n), t(n), ph(n), sh(n);
  const double nb = norm2(b);
  if (nb == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return {0, 0.0};
  }
  A(x, r);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
  r0 = r;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  double res = norm2(r) / nb;
  int it = 0;
  while (res > tol && it < max_iter) {
    ++it;
    double rho_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) rho_new += r0[i] * r[i];
    if (rho_new == 0.0 || omega == 0.0) {
      // breakdown: restart from the current iterate
      A(x, r);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
      r0 = r;
      std::fill(p.begin(), p.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      rho = alpha = omega = 1.0;
      res = norm2(r) / nb;
      continue;
    }
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    M(p, ph);
    A(ph, v);
    double r0v = 0.0;
    for (std::size_t i = 0; i < n; ++i) r0v += r0[i] * v[i];
    alpha = rho / r0v;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2(s) / nb <= tol) {
      for (std::size_t i = 0; i < n; ++i) x[i] += alpha * ph[i];
      A(x, r);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
      res = norm2(r) / nb;
      continue;
    }
    M(s, sh);
    A(sh, t);
    double tt = 0.0, ts = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      tt += t[i] * t[i];
      ts += t[i] * s[i];
    }
    omega = tt == 0.0 ? 0.0 : ts / tt;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * ph[i] + omega * sh[i];
      r[i] = s[i] - omega * t[i];
    }
    res = norm2(r) / nb;
  }
  if (!(res <= tol)) throw SolverError("BiCGSTAB did not converge in " + std::to_string(it) + " iterations", res);
  return {it, res};
}

}  // namespace mfg
