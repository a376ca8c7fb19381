#include "mfg/experiments.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <numeric>
#include <random>

#include "mfg/discrete_ops.hpp"

namespace mfg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string path_in(const RunContext& ctx, const std::string& name) { return ctx.out_dir + "/" + name; }

bool writing(const RunContext& ctx) { return !ctx.out_dir.empty(); }

Table::Cell opt_cell(const std::optional<double>& v) {
  if (v) return *v;
  return std::string();
}

void write_sweep_log(const RunContext& ctx, int level, const SweepReport& r) {
  Table t;
  t.header = {"iteration", "alpha", "err_U", "err_M", "res_F", "res_G", "inner_avg"};
  for (int k = 0; k < r.iterations(); ++k) {
    const auto at = [&](const std::vector<double>& v) -> Table::Cell {
      if (static_cast<std::size_t>(k) < v.size()) return v[static_cast<std::size_t>(k)];
      return std::string();
    };
    t.add({static_cast<long long>(k + 1), at(r.alpha), at(r.err_U), at(r.err_M), at(r.res_F), at(r.res_G),
           at(r.inner_avg)});
  }
  write_table(path_in(ctx, fmt::format("sweep_log_L{}.csv", level)), t, ctx.cfg.hash);
}

void write_fields(const RunContext& ctx, int level, const FieldSeries& U, const FieldSeries& M) {
  if (ctx.cfg.write_binary) {
    write_field_binary(path_in(ctx, fmt::format("fields_u_L{}.bin", level)), U, ctx.cfg.hash);
    write_field_binary(path_in(ctx, fmt::format("fields_m_L{}.bin", level)), M, ctx.cfg.hash);
  } else {
    write_field_csv(path_in(ctx, fmt::format("fields_u_L{}.csv", level)), U, ctx.cfg.hash);
    write_field_csv(path_in(ctx, fmt::format("fields_m_L{}.csv", level)), M, ctx.cfg.hash);
  }
}

Table level_table(const std::vector<LevelSummary>& levels) {
  Table t;
  t.header = {"level", "n", "nt", "solver", "iterations", "converged", "final_error", "inner_avg",
              "residual_F", "residual_G", "max_mass_dev"};
  for (const auto& s : levels)
    t.add({static_cast<long long>(s.level), static_cast<long long>(s.n), static_cast<long long>(s.nt), s.solver,
           static_cast<long long>(s.iterations), static_cast<long long>(s.converged), s.final_error, s.inner_avg,
           s.residual_F, s.residual_G, s.max_mass_dev});
  return t;
}

Table timing_table(const std::vector<LevelSummary>& levels) {
  Table t;
  t.header = {"level", "interpolation_seconds", "solve_seconds"};
  for (const auto& s : levels)
    t.add({static_cast<long long>(s.level), s.interpolation_seconds, s.solve_seconds});
  return t;
}

std::vector<double> random_vec(std::mt19937& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

double max_mass_deviation(const FieldSeries& M) {
  double dev = 0.0;
  for (int n = 0; n <= M.grid().nt; ++n) dev = std::max(dev, std::abs(total_mass(M.frame(n), M.grid()) - 1.0));
  return dev;
}

LevelSummary summarize(const LevelReport& rep, const FieldSeries& M) {
  LevelSummary s;
  s.level = rep.level;
  s.n = M.grid().n;
  s.nt = M.grid().nt;
  s.solver = rep.solver;
  if (rep.solver == to_string(CoarseSolver::Newton)) {
    s.iterations = rep.newton_iterations;
    s.converged = true;
  } else {
    s.iterations = rep.sweep.iterations();
    s.converged = rep.sweep.converged;
    s.final_error = rep.sweep.final_error();
    const auto& ia = rep.sweep.inner_avg;
    if (!ia.empty()) s.inner_avg = std::accumulate(ia.begin(), ia.end(), 0.0) / static_cast<double>(ia.size());
  }
  s.residual_F = rep.residual_F;
  s.residual_G = rep.residual_G;
  s.max_mass_dev = max_mass_deviation(M);
  s.interpolation_seconds = rep.interpolation_seconds;
  s.solve_seconds = rep.solve_seconds;
  return s;
}

SolveOutcome run_solve(const RunContext& ctx) {
  if (writing(ctx)) ensure_dir(ctx.out_dir);
  SolveOutcome out;
  const auto opt = ctx.cfg.multiscale_options();
  out.result = multiscale_solve(ctx.cfg.problem, opt, [&](const LevelReport& rep, const FieldSeries& U,
                                                          const FieldSeries& M) {
    out.levels.push_back(summarize(rep, M));
    if (!writing(ctx)) return;
    if (ctx.cfg.write_fields) write_fields(ctx, rep.level, U, M);
    if (rep.sweep.iterations() > 0) write_sweep_log(ctx, rep.level, rep.sweep);
  });
  if (writing(ctx)) {
    write_table(path_in(ctx, "levels.csv"), level_table(out.levels), ctx.cfg.hash);
    write_table(path_in(ctx, "timings.csv"), timing_table(out.levels), ctx.cfg.hash);
  }
  return out;
}

OrderStudyOutcome run_order_study(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  OrderStudyOutcome out;
  out.reference_level = cfg.reference_level == 0 ? cfg.L + 1 : cfg.reference_level;
  if (writing(ctx)) ensure_dir(ctx.out_dir);
  Table table;
  table.header = {"order", "level", "n", "err_U", "err_M", "order_U", "order_M"};
  for (SchemeOrder order : cfg.study_orders) {
    auto opt = cfg.multiscale_options();
    opt.order = order;
    opt.L0 = cfg.L0;
    opt.L = out.reference_level;
    opt.alpha_finest = cfg.alpha_finest;
    std::vector<std::pair<FieldSeries, FieldSeries>> kept;
    OrderStudyOutcome::PerOrder po;
    po.order = order;
    const auto res = multiscale_solve(cfg.problem, opt, [&](const LevelReport& rep, const FieldSeries& U,
                                                            const FieldSeries& M) {
      po.levels.push_back(summarize(rep, M));
      if (rep.level <= cfg.L) kept.emplace_back(U, M);
    });
    po.rows = convergence_order_table(kept, res.U, res.M);
    for (const auto& r : po.rows)
      table.add({std::string(to_string(order)), static_cast<long long>(r.level),
                 static_cast<long long>(level_grid(cfg.problem.dim, r.level, cfg.problem.T, cfg.grid).n), r.err_U,
                 r.err_M, opt_cell(r.order_U), opt_cell(r.order_M)});
    if (writing(ctx)) {
      write_table(path_in(ctx, fmt::format("levels_{}.csv", to_string(order))), level_table(po.levels), cfg.hash);
      write_table(path_in(ctx, fmt::format("timings_{}.csv", to_string(order))), timing_table(po.levels), cfg.hash);
    }
    out.orders.push_back(std::move(po));
  }
  if (writing(ctx)) write_table(path_in(ctx, "order_table.csv"), table, cfg.hash);
  return out;
}

std::vector<NewtonCompareRow> run_compare_newton(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.compare_levels.empty()) throw ConfigError(cfg.source + ": [study] compare_levels is empty");
  std::vector<NewtonCompareRow> rows;
  for (int level : cfg.compare_levels) {
    const auto g = level_grid(cfg.problem.dim, level, cfg.problem.T, cfg.grid);
    const Scheme sc(cfg.problem, g, cfg.order, cfg.march_options());
    NewtonCompareRow row;
    row.level = level;
    row.n = g.n;

    auto [U0, M0] = naive_guess(sc);
    auto t0 = Clock::now();
    const auto nr = newton_iterate(sc, U0, M0, cfg.newton);
    row.newton_seconds = seconds_since(t0);
    row.newton_converged = nr.converged;
    row.newton_iterations = nr.iterations;
    std::tie(row.newton_res_F, row.newton_res_G) = system_residual(sc, nr.U, nr.M);

    SweepOptions so;
    so.eps = cfg.eps;
    so.max_iters = cfg.max_iters;
    so.schedule = cfg.schedule;
    so.track_residuals = false;
    t0 = Clock::now();
    const auto sr = alternating_sweep(sc, M0, so);
    row.sweep_seconds = seconds_since(t0);
    row.sweep_converged = sr.report.converged;
    row.sweep_iterations = sr.report.iterations();
    std::tie(row.sweep_res_F, row.sweep_res_G) = system_residual(sc, sr.U, sr.M);
    spdlog::info("compare N={}: newton {:.3f}s ({} steps), sweep {:.3f}s ({} iterations)", g.n, row.newton_seconds,
                 row.newton_iterations, row.sweep_seconds, row.sweep_iterations);
    rows.push_back(row);
  }
  if (writing(ctx)) {
    ensure_dir(ctx.out_dir);
    Table t;
    t.header = {"level", "n", "t_newton", "t_as", "ratio", "newton_iterations", "as_iterations", "newton_res_F",
                "newton_res_G", "as_res_F", "as_res_G", "newton_converged", "as_converged"};
    for (const auto& r : rows)
      t.add({static_cast<long long>(r.level), static_cast<long long>(r.n), r.newton_seconds, r.sweep_seconds,
             r.ratio(), static_cast<long long>(r.newton_iterations), static_cast<long long>(r.sweep_iterations),
             r.newton_res_F, r.newton_res_G, r.sweep_res_F, r.sweep_res_G,
             static_cast<long long>(r.newton_converged), static_cast<long long>(r.sweep_converged)});
    write_table(path_in(ctx, "newton_compare.csv"), t, cfg.hash);
  }
  return rows;
}

std::vector<TruncationStudy> run_truncation_study(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.truncation_levels.size() < 2) throw ConfigError(cfg.source + ": [study] truncation_levels needs two levels");
  std::vector<TruncationStudy> out;
  const auto mp = default_manufactured(cfg.problem.dim);
  for (SchemeOrder order : cfg.study_orders)
    out.push_back(truncation_order_study(cfg.problem, mp, order, cfg.truncation_levels, cfg.grid));
  if (writing(ctx)) {
    ensure_dir(ctx.out_dir);
    Table t;
    t.header = {"order", "level", "h", "F_strong", "G_strong", "G_weak"};
    for (const auto& s : out) {
      for (const auto& r : s.rows)
        t.add({std::string(to_string(s.order)), static_cast<long long>(r.level), r.h, r.F_strong, r.G_strong,
               r.G_weak});
      t.add({std::string(to_string(s.order)) + "_slope", -1LL, std::string(), s.slope_F, s.slope_G_strong,
             s.slope_G_weak});
    }
    write_table(path_in(ctx, "truncation.csv"), t, cfg.hash);
  }
  return out;
}

SpectraOutcome run_spectra(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto g = level_grid(cfg.problem.dim, cfg.spectra_level, cfg.problem.T, cfg.grid);
  const Scheme sc(cfg.problem, g, cfg.order, cfg.march_options());
  SpectraOutcome out;
  out.level = cfg.spectra_level;
  out.unknowns = 2 * g.frames() * g.points();

  NewtonOptions no = cfg.newton;
  no.tol = std::min(no.tol, 1e-12);
  const auto star = newton_solve(sc, no);
  const auto blocks = estimate_jacobians(sc, star.U, star.M, 0.0, ctx.threads);
  const auto spec = sweep_spectral_radius(blocks);
  out.rho = spec.rho;
  out.lambda_max = spec.lambda_max;
  out.bound = relax_bound(spec.rho);
  {
    const auto fu = detail::checked_lu(blocks.F_u, "F_u");
    const auto gm = detail::checked_lu(blocks.G_m, "G_m");
    const Eigen::MatrixXd A = gm.solve(blocks.G_u), B = fu.solve(blocks.F_m);
    const auto [ab, ba] = spectral_radius_commute_check(A, B);
    out.commute_gap = std::abs(ab - ba);
  }

  const auto naive = FieldSeries::constant_in_time(GridFn(g, sc.mT()));
  SweepOptions so;
  so.eps = 1e-12;
  so.max_iters = 200;
  so.schedule = RelaxSchedule::constant(1.0);
  so.schedule.guard = false;
  const auto plain = alternating_sweep(sc, naive, so);
  out.alpha1_converged = plain.report.converged;
  try {
    out.alpha1_rate = empirical_rate(plain.report);
  } catch (const AnalysisError&) {
  }
  so.schedule = RelaxSchedule::constant(std::min(1.0, 0.9 * out.bound));
  so.schedule.guard = false;
  so.eps = 1e-10;
  so.max_iters = 2000;
  const auto relaxed = alternating_sweep(sc, naive, so);
  out.relaxed_converged = relaxed.report.converged;
  out.relaxed_iterations = relaxed.report.iterations();

  if (writing(ctx)) {
    ensure_dir(ctx.out_dir);
    Table t;
    t.header = {"level", "unknowns", "rho", "lambda_re", "lambda_im", "relax_bound", "alpha1_rate",
                "alpha1_converged", "relaxed_alpha", "relaxed_converged", "relaxed_iterations", "commute_gap"};
    t.add({static_cast<long long>(out.level), static_cast<long long>(out.unknowns), out.rho, out.lambda_max.real(),
           out.lambda_max.imag(), out.bound, opt_cell(out.alpha1_rate), static_cast<long long>(out.alpha1_converged),
           std::min(1.0, 0.9 * out.bound), static_cast<long long>(out.relaxed_converged),
           static_cast<long long>(out.relaxed_iterations), out.commute_gap});
    write_table(path_in(ctx, "spectra.csv"), t, cfg.hash);
  }
  return out;
}

std::vector<LevelSummary> run_mass_audit(const RunContext& ctx) {
  auto solved = run_solve(ctx);
  if (writing(ctx)) {
    const auto& M = solved.result.M;
    const auto& g = M.grid();
    Table t;
    t.header = {"level", "n", "t", "mass", "deviation"};
    for (int n = 0; n <= g.nt; ++n) {
      const double mass = total_mass(M.frame(n), g);
      t.add({static_cast<long long>(g.level), static_cast<long long>(n), g.t(n), mass, mass - 1.0});
    }
    write_table(path_in(ctx, "mass_audit.csv"), t, ctx.cfg.hash);
  }
  return solved.levels;
}

std::vector<CheckResult> run_self_test(const RunContext& ctx) {
  const auto& cfg = ctx.cfg;
  std::vector<CheckResult> out;
  std::mt19937 rng(ctx.seed);
  const auto g = level_grid(cfg.problem.dim, 3, cfg.problem.T, cfg.grid);
  const Scheme sc(cfg.problem, g, cfg.order, cfg.march_options());

  {
    CheckResult c{"mass", false, {}};
    try {
      const auto naive = FieldSeries::constant_in_time(GridFn(g, sc.mT()));
      const auto M = solve_kfp(sc, solve_hjb(sc, naive).U);
      const double target = total_mass(sc.mT(), g);
      double dev = 0.0;
      for (int n = 0; n <= g.nt; ++n) dev = std::max(dev, std::abs(total_mass(M.frame(n), g) - target));
      c.pass = dev <= 1e-10;
      c.detail = fmt::format("max deviation {:.3e}", dev);
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    out.push_back(c);
  }

  {
    CheckResult c{"adjoint", false, {}};
    double worst_identity = 0.0, worst_sum = 0.0;
    const double gamma = cfg.problem.gamma;
    for (int trial = 0; trial < 20; ++trial) {
      const GridFn m(g, random_vec(rng, g.points(), 0.0, 2.0));
      const GridFn u(g, random_vec(rng, g.points(), -1.0, 1.0));
      const GridFn w(g, random_vec(rng, g.points(), -1.0, 1.0));
      const auto B = transport_B(m, u, cfg.order, gamma);
      const auto pu = one_sided(u.values(), g, cfg.order), pw = one_sided(w.values(), g, cfg.order);
      const auto grad = hamiltonian_gradient(g, pu, gamma);
      double lhs = 0.0, rhs = 0.0, sum = 0.0, scale = 1.0;
      for (std::size_t i = 0; i < g.points(); ++i) {
        lhs += B[i] * w[i];
        sum += B[i];
        scale = std::max(scale, std::abs(B[i]));
        for (int s = 0; s < 2 * g.dim; ++s) rhs -= m[i] * grad[s][i] * pw.slot(s)[i];
      }
      worst_identity = std::max(worst_identity, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
      worst_sum = std::max(worst_sum, std::abs(sum) / scale);
    }
    c.pass = worst_identity <= 1e-10 && worst_sum <= 1e-10;
    c.detail = fmt::format("identity {:.3e}, column sum {:.3e}", worst_identity, worst_sum);
    out.push_back(c);
  }

  {
    CheckResult c{"spectral_commute", false, {}};
    std::uniform_int_distribution<int> dim(1, 8);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = dim(rng);
      Eigen::MatrixXd A(n, n), B(n, n);
      for (auto* X : {&A, &B}) {
        const auto v = random_vec(rng, static_cast<std::size_t>(n * n), -1.0, 1.0);
        *X = Eigen::Map<const Eigen::MatrixXd>(v.data(), n, n);
      }
      const auto [ab, ba] = spectral_radius_commute_check(A, B);
      worst = std::max(worst, std::abs(ab - ba) / std::max(1.0, ab));
    }
    c.pass = worst <= 1e-8;
    c.detail = fmt::format("worst relative gap {:.3e}", worst);
    out.push_back(c);
  }
  return out;
}

}  // namespace mfg
