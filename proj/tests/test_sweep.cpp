#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mfg/sweep.hpp"

using namespace mfg;

namespace {

ProblemSpec small_spec() {
  ProblemSpec p;
  p.nu = 0.4;
  p.gamma = 2.0;
  p.T = 0.05;
  p.phi = catalog::parse("cos(-2, 1) + sin(0.7, 2)");
  p.u0 = catalog::parse("sin(0.3, 1)");
  p.mT = catalog::density_1d();
  return p;
}

FieldSeries naive(const Scheme& sc) { return FieldSeries::constant_in_time(GridFn(sc.grid(), sc.mT())); }

}  // namespace

TEST_CASE("alpha = 1 reproduces the unrelaxed recursion exactly", "[sweep]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 16, 8, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  SweepOptions opt;
  opt.eps = 1e-300;  // never converges, so every iteration runs
  opt.max_iters = 4;
  opt.schedule = RelaxSchedule::constant(1.0);
  SweepResult r = alternating_sweep(sc, naive(sc), opt);

  FieldSeries M = naive(sc), U;
  for (int k = 0; k < 4; ++k) {
    U = solve_hjb(sc, M).U;
    M = solve_kfp(sc, U);
  }
  // the returned iterate is the best one; with alpha = 1 this run contracts so it is the last
  REQUIRE(r.report.best_iteration == 3);
  CHECK(std::equal(r.U.data().begin(), r.U.data().end(), U.data().begin()));
  CHECK(std::equal(r.M.data().begin(), r.M.data().end(), M.data().begin()));
  CHECK(std::isinf(r.report.err_U.front()));
}

TEST_CASE("converged sweep leaves small system residuals", "[sweep]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 32, 16, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  SweepOptions opt;
  opt.eps = 1e-6;
  const auto r = alternating_sweep(sc, naive(sc), opt);
  REQUIRE(r.report.converged);
  const auto [f, gg] = system_residual(sc, r.U, r.M);
  CHECK(f <= 1e-5);
  CHECK(gg <= 1e-5);
  CHECK(r.report.final_error() <= opt.eps);

  // last three error ratios contract
  const auto& e = r.report.err_M;
  REQUIRE(e.size() >= 4);
  for (std::size_t k = e.size() - 3; k < e.size(); ++k) CHECK(e[k] / e[k - 1] < 1.0);

  const auto n = e.size();
  CHECK(r.report.err_U.size() == n);
  CHECK(r.report.res_F.size() == n);
  CHECK(r.report.alpha.size() == n);
  CHECK(r.report.elapsed.size() == n);
}

TEST_CASE("perturbing U increases the HJB residual", "[sweep]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 16, 8, spec.T);
  Scheme sc(spec, g, SchemeOrder::First);
  SweepOptions opt;
  const auto r = alternating_sweep(sc, naive(sc), opt);
  REQUIRE(r.report.converged);
  const double base = system_residual(sc, r.U, r.M).first;
  auto U = r.U;
  U.frame(3)[5] += 1.0;
  CHECK(system_residual(sc, U, r.M).first > base);
}

TEST_CASE("relaxed iterates conserve mass at every iteration", "[sweep][property]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 32, 8, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  SweepOptions opt;
  opt.max_iters = 6;
  opt.schedule = RelaxSchedule::constant(0.3);
  // start from a non-uniform guess whose frames all carry unit mass
  FieldSeries M0 = naive(sc);
  for (int n = 0; n < g.nt; ++n) {
    auto f = M0.frame(n);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 1.0 + 0.3 * std::sin(2 * std::numbers::pi * g.h() * i + n);
  }
  auto check_mass = [&](const FieldSeries& M) {
    for (int n = 0; n <= g.nt; ++n) CHECK(std::abs(total_mass(M.frame(n), g) - 1.0) <= 1e-12);
  };
  check_mass(M0);
  for (int k = 1; k <= 4; ++k) {
    SweepOptions o = opt;
    o.max_iters = k;
    o.eps = 1e-300;
    o.schedule.guard = false;
    const auto r = alternating_sweep(sc, M0, o);
    check_mass(r.M);
  }
}

TEST_CASE("schedule grows alpha and switches late", "[sweep]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 16, 8, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  SweepOptions opt;
  opt.eps = 1e-8;
  opt.schedule.alpha0 = 0.25;
  opt.schedule.growth = 2.0;
  opt.schedule.alpha_late = 0.9;
  const auto r = alternating_sweep(sc, naive(sc), opt);
  REQUIRE(r.report.converged);
  const auto& a = r.report.alpha;
  CHECK(a[0] == 0.25);
  CHECK(a[1] == 0.5);
  CHECK(a[2] == 1.0);
  bool switched = false;
  for (std::size_t k = 1; k < a.size(); ++k) {
    const double prev = std::max(r.report.err_U[k - 1], r.report.err_M[k - 1]);
    if (prev < 5 * opt.eps) switched = true;
    if (switched) CHECK(a[k] == 0.9);
  }
  for (double v : a) CHECK((v > 0.0 && v <= 1.0));
}

TEST_CASE("non-convergence returns the best iterate", "[sweep]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 16, 8, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  SweepOptions opt;
  opt.eps = 1e-14;
  opt.max_iters = 3;
  const auto r = alternating_sweep(sc, naive(sc), opt);
  CHECK_FALSE(r.report.converged);
  CHECK_FALSE(r.report.aborted);
  CHECK(r.report.iterations() == 3);
  CHECK(r.report.best_iteration >= 1);
  CHECK_FALSE(r.report.message.empty());
}

TEST_CASE("sweep validates its inputs", "[sweep]") {
  const auto spec = small_spec();
  const auto g = LevelGrid::make(1, 16, 8, spec.T);
  Scheme sc(spec, g, SchemeOrder::Second);
  SweepOptions opt;
  opt.eps = 0.0;
  CHECK_THROWS_AS(alternating_sweep(sc, naive(sc), opt), std::invalid_argument);
  opt.eps = 1e-6;
  opt.schedule.alpha0 = 1.5;
  CHECK_THROWS_AS(alternating_sweep(sc, naive(sc), opt), std::invalid_argument);
  opt.schedule.alpha0 = 1.0;
  CHECK_THROWS_AS(alternating_sweep(sc, FieldSeries(LevelGrid::make(1, 8, 8, spec.T)), opt), GridError);
}

TEST_CASE("divergent march aborts with a diagnostic", "[sweep]") {
  auto spec = small_spec();
  spec.gamma = 4.0;
  spec.phi = catalog::parse("cos(-5000, 1)");
  const auto g = LevelGrid::make(1, 16, 2, spec.T);
  MarchOptions mo;
  mo.max_inner = 1;
  Scheme sc(spec, g, SchemeOrder::Second, mo);
  const auto r = alternating_sweep(sc, naive(sc), SweepOptions{});
  CHECK(r.report.aborted);
  CHECK_FALSE(r.report.converged);
  CHECK(r.report.message.find("iteration 1") != std::string::npos);
}
