#include <catch_amalgamated.hpp>

#include <random>

#include "mfg/analysis.hpp"
#include "mfg/newton.hpp"

using namespace mfg;
using Catch::Matchers::WithinAbs;

namespace {

ProblemSpec tiny_spec() {
  ProblemSpec p;
  p.nu = 0.4;
  p.gamma = 2.0;
  p.T = 0.05;
  p.phi = catalog::parse("cos(-2, 1) + sin(0.7, 2)");
  p.u0 = catalog::parse("sin(0.3, 1)");
  p.mT = catalog::density_1d();
  return p;
}

FieldSeries random_field(const LevelGrid& g, std::mt19937& rng, double base, double amp) {
  std::uniform_real_distribution<double> d(-1, 1);
  FieldSeries F(g);
  for (auto& v : F.data()) v = base + amp * d(rng);
  return F;
}

Eigen::MatrixXd dense_laplacian(const LevelGrid& g, double nu) {
  const auto P = g.points();
  Eigen::MatrixXd A(P, P);
  std::vector<double> e(P), out(P);
  for (std::size_t c = 0; c < P; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    laplace_apply(g, nu, e, out);
    for (std::size_t r = 0; r < P; ++r) A(r, c) = out[r];
  }
  return A;
}

}  // namespace

TEST_CASE("relaxation bound examples", "[analysis]") {
  CHECK(relax_bound(0.0) == 2.0);
  CHECK(relax_bound(1.0) == 1.0);
  CHECK(relax_bound(3.0) == 0.5);
  CHECK_THROWS_AS(relax_bound(-0.1), std::invalid_argument);
}

TEST_CASE("spectral radius of products commutes", "[analysis][property]") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(5, 5);
  auto [a, b] = spectral_radius_commute_check(I, I);
  CHECK_THAT(a, WithinAbs(1.0, 1e-14));
  CHECK_THAT(b, WithinAbs(1.0, 1e-14));
  std::tie(a, b) = spectral_radius_commute_check(Eigen::MatrixXd::Zero(4, 4), Eigen::MatrixXd::Random(4, 4));
  CHECK(a == 0.0);
  CHECK(b == 0.0);

  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> size(1, 8);
  std::normal_distribution<double> d;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    const Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return d(rng); });
    const Eigen::MatrixXd B = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return d(rng); });
    const auto [ab, ba] = spectral_radius_commute_check(A, B);
    CHECK(std::abs(ab - ba) <= 1e-8 * std::max(1.0, ab));
  }
  CHECK_THROWS_AS(spectral_radius_commute_check(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 3)),
                  AnalysisError);
}

TEST_CASE("identity blocks give unit spectral radius", "[analysis]") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(6, 6);
  const auto s = sweep_spectral_radius({I, I, I, I});
  CHECK_THAT(s.rho, WithinAbs(1.0, 1e-14));
  CHECK_THROWS_AS(sweep_spectral_radius({Eigen::MatrixXd::Zero(6, 6), I, I, I}), AnalysisError);
}

TEST_CASE("finite-difference blocks of a linear problem are exact", "[analysis]") {
  for (auto order : {SchemeOrder::First, SchemeOrder::Second}) {
    auto spec = tiny_spec();
    spec.gamma = 0.0;  // constant gradient term: the system is linear
    spec.V = Coupling::local_power(1.0);
    const auto g = LevelGrid::make(1, 4, 2, spec.T);
    Scheme sc(spec, g, order);
    std::mt19937 rng(5);
    const auto blocks = estimate_jacobians(sc, random_field(g, rng, 0, 1), random_field(g, rng, 1, 0.3));

    const auto P = static_cast<Eigen::Index>(g.points());
    const auto N = P * (g.nt + 1);
    const Eigen::MatrixXd L = dense_laplacian(g, spec.nu), I = Eigen::MatrixXd::Identity(P, P);
    const double tau = g.tau(), ce = sc.theta_explicit(), ci = sc.theta_implicit();
    Eigen::MatrixXd Fu = Eigen::MatrixXd::Zero(N, N), Fm = Fu, Gu = Fu, Gm = Fu;
    Fu.block(0, 0, P, P) = I;
    Gm.block(N - P, N - P, P, P) = I;
    for (int n = 0; n < g.nt; ++n) {
      const auto a = n * P, b = (n + 1) * P;
      Fu.block(b, b, P, P) = I + ci * L;
      Fu.block(b, a, P, P) = -I + ce * L;
      if (order == SchemeOrder::Second) {
        Fm.block(b, a, P, P) = -0.5 * tau * I;
        Fm.block(b, b, P, P) = -0.5 * tau * I;
      } else {
        Fm.block(b, a, P, P) = -tau * I;
      }
      Gm.block(a, a, P, P) = I + ci * L;
      Gm.block(a, b, P, P) = -I + ce * L;
    }
    CHECK((blocks.F_u - Fu).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((blocks.F_m - Fm).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((blocks.G_u - Gu).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((blocks.G_m - Gm).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("coupling block of a quadratic power matches the derivative", "[analysis]") {
  auto spec = tiny_spec();
  const auto g = LevelGrid::make(1, 4, 2, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  std::mt19937 rng(8);
  const auto U = random_field(g, rng, 0, 1), M = random_field(g, rng, 1, 0.3);
  const auto b = estimate_jacobians(sc, U, M);
  const auto P = static_cast<Eigen::Index>(g.points());
  for (int n = 0; n < g.nt; ++n)
    for (int k : {n, n + 1})
      for (Eigen::Index i = 0; i < P; ++i)
        for (Eigen::Index j = 0; j < P; ++j) {
          const double expect = i == j ? -0.5 * g.tau() * 2.0 * M.frame(k)[i] : 0.0;
          CHECK_THAT(b.F_m((n + 1) * P + i, k * P + j), WithinAbs(expect, 1e-6));
        }
}

TEST_CASE("central differences are second order in the step", "[analysis]") {
  auto spec = tiny_spec();
  spec.gamma = 0.0;
  spec.V = Coupling::local_power(3.0);
  const auto g = LevelGrid::make(1, 4, 2, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  std::mt19937 rng(12);
  const auto U = random_field(g, rng, 0, 1), M = random_field(g, rng, 1, 0.3);
  const auto b1 = estimate_jacobians(sc, U, M, 4e-2);
  const auto b2 = estimate_jacobians(sc, U, M, 2e-2);
  const auto b3 = estimate_jacobians(sc, U, M, 1e-2);
  const double d12 = (b1.F_m - b2.F_m).norm(), d23 = (b2.F_m - b3.F_m).norm();
  CHECK(d12 / d23 == Catch::Approx(4.0).epsilon(0.05));
}

TEST_CASE("threaded probing gives identical blocks", "[analysis]") {
  const auto spec = tiny_spec();
  const auto g = LevelGrid::make(1, 4, 2, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  std::mt19937 rng(1);
  const auto U = random_field(g, rng, 0, 1), M = random_field(g, rng, 1, 0.3);
  const auto a = estimate_jacobians(sc, U, M, 0.0, 1), b = estimate_jacobians(sc, U, M, 0.0, 3);
  CHECK(a.F_u == b.F_u);
  CHECK(a.G_m == b.G_m);
}

TEST_CASE("sweep contraction matches the composed spectral radius", "[analysis]") {
  auto spec = tiny_spec();
  spec.T = 0.1;
  const auto g = LevelGrid::make(1, 4, 2, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  NewtonOptions nopt;
  nopt.tol = 1e-13;
  const auto fixed = newton_solve(sc, nopt);
  const auto s = sweep_spectral_radius(estimate_jacobians(sc, fixed.U, fixed.M));
  REQUIRE(s.rho < 1.0);
  REQUIRE(s.rho > 1e-3);

  SweepOptions opt;
  opt.eps = 1e-13;
  opt.max_iters = 400;
  opt.schedule = RelaxSchedule::constant(1.0);
  opt.schedule.guard = false;
  const auto r = alternating_sweep(sc, naive_guess(sc).second, opt);
  REQUIRE(r.report.converged);
  const double rate = empirical_rate(r.report, 5, 1e-11);
  CHECK(std::abs(rate - s.rho) <= 0.2 * s.rho);

  // relaxed map spectrum is the affine image of the unrelaxed one
  const Eigen::MatrixXd C = sweep_map(estimate_jacobians(sc, fixed.U, fixed.M));
  const double alpha = 0.37;
  Eigen::EigenSolver<Eigen::MatrixXd> relaxed(alpha * C + (1 - alpha) * Eigen::MatrixXd::Identity(C.rows(), C.cols()));
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
    const auto want = alpha * s.eigenvalues[i] + (1 - alpha);
    double best = 1e300;
    for (Eigen::Index j = 0; j < relaxed.eigenvalues().size(); ++j)
      best = std::min(best, std::abs(relaxed.eigenvalues()[j] - want));
    CHECK(best <= 1e-8);
  }
}

TEST_CASE("relaxation below the bound rescues a divergent sweep", "[analysis]") {
  auto spec = tiny_spec();
  spec.T = 0.5;
  const auto g = LevelGrid::make(1, 4, 2, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  NewtonOptions nopt;
  nopt.tol = 1e-13;
  const auto fixed = newton_solve(sc, nopt);
  const auto s = sweep_spectral_radius(estimate_jacobians(sc, fixed.U, fixed.M));
  REQUIRE(s.rho > 1.0);

  SweepOptions opt;
  opt.eps = 1e-8;
  opt.max_iters = 100;
  opt.schedule = RelaxSchedule::constant(1.0);
  opt.schedule.guard = false;
  CHECK_FALSE(alternating_sweep(sc, naive_guess(sc).second, opt).report.converged);
  opt.max_iters = 400;
  opt.schedule = RelaxSchedule::constant(std::min(1.0, 0.9 * relax_bound(s.rho)));
  opt.schedule.guard = false;
  const auto r = alternating_sweep(sc, naive_guess(sc).second, opt);
  CHECK(r.report.converged);
  CHECK(rel_norm(r.M, fixed.M) <= 1e-6);
}

TEST_CASE("order table of identical solutions", "[analysis]") {
  const auto g1 = LevelGrid::make(1, 8, 8, 1.0, 3), g2 = LevelGrid::make(1, 16, 16, 1.0, 4);
  const FieldSeries ref(g2, 2.0);
  const auto rows = convergence_order_table({{FieldSeries(g1, 2.0), FieldSeries(g1, 2.0)},
                                             {FieldSeries(g2, 2.0), FieldSeries(g2, 2.0)}},
                                            ref, ref);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.err_U == 0.0);
    CHECK(r.err_M == 0.0);
    CHECK_FALSE(r.order_U.has_value());
  }
  CHECK(rows[1].level == 4);
  const FieldSeries coarse_ref(g1, 1.0);
  CHECK_THROWS_AS(convergence_order_table({{FieldSeries(g2), FieldSeries(g2)}}, coarse_ref, coarse_ref),
                  AnalysisError);
}

TEST_CASE("restriction picks nested points", "[analysis]") {
  const auto f = LevelGrid::make(2, 8, 4, 1.0), c = LevelGrid::make(2, 4, 2, 1.0);
  FieldSeries X(f);
  for (std::size_t i = 0; i < X.data().size(); ++i) X.data()[i] = static_cast<double>(i);
  const auto R = restrict_to(X, c);
  // coarse frame 1, point (1, 2) <- fine frame 2, point (2, 4)
  CHECK(R.frame(1)[1 * 4 + 2] == X.frame(2)[2 * 8 + 4]);
  CHECK_THROWS_AS(restrict_to(X, LevelGrid::make(2, 4, 4, 1.0)), GridError);
}

TEST_CASE("manufactured truncation slopes", "[analysis]") {
  auto spec = tiny_spec();
  spec.T = 0.5;
  for (int dim : {1, 2}) {
    spec.dim = dim;
    spec.phi = dim == 1 ? catalog::parse("cos(-2, 1)") : catalog::parse("cos(-2, 1) + sin_y(0.5, 1)");
    spec.mT = dim == 1 ? catalog::density_1d() : catalog::density_2d();
    const auto mp = default_manufactured(dim);
    const std::vector<int> levels = dim == 1 ? std::vector<int>{6, 7, 8, 9} : std::vector<int>{4, 5, 6};
    const auto second = truncation_order_study(spec, mp, SchemeOrder::Second, levels);
    CHECK(second.slope_F == Catch::Approx(2.0).margin(0.2));
    CHECK(second.slope_G_weak == Catch::Approx(2.0).margin(0.2));
    const auto first = truncation_order_study(spec, mp, SchemeOrder::First, levels);
    CHECK(first.slope_F == Catch::Approx(1.0).margin(0.2));
    CHECK(first.slope_G_weak == Catch::Approx(1.0).margin(0.2));
    CHECK(first.slope_G_strong > 0.0);
  }
}

TEST_CASE("constant pair is an exact discrete solution", "[analysis]") {
  auto spec = tiny_spec();
  spec.phi = TrigPoly::constant(0.0);
  ManufacturedPair mp;
  mp.u.terms.push_back({TimeFactor{}, TrigPoly::constant(0.75)});
  mp.m.terms.push_back({TimeFactor{}, TrigPoly::constant(1.0)});
  for (auto order : {SchemeOrder::First, SchemeOrder::Second}) {
    const auto s = truncation_order_study(spec, mp, order, {4, 5, 6});
    for (const auto& row : s.rows) {
      CHECK(row.F_strong <= 1e-12);
      CHECK(row.G_strong <= 1e-12);
    }
  }
}

TEST_CASE("oversized analysis is refused", "[analysis]") {
  const auto spec = tiny_spec();
  const auto g = LevelGrid::make(1, 64, 32, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  CHECK_THROWS_AS(estimate_jacobians(sc, FieldSeries(g), FieldSeries(g, 1.0)), AnalysisError);
}
