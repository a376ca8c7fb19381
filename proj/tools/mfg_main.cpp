// Command-line driver: one experiment per invocation.
//
// Exit codes: 0 success, 1 unexpected error, 2 bad command line or config,
// 3 solver failure, 4 self-test failure.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>

#include "mfg/experiments.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kSolver = 3, kSelfTest = 4 };

struct Flags {
  std::string config;
  std::string out;
  int threads = 1;
  std::vector<int> level_override;
  unsigned seed = 1;
  bool self_test = false;
  bool quiet = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "experiment config file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory (overrides [output] dir)");
  sub->add_option("--threads", f.threads, "worker threads for Jacobian probing")->check(CLI::Range(1, 256));
  sub->add_option("--level-override", f.level_override, "coarsest and finest level")->expected(2);
  sub->add_option("--seed", f.seed, "seed for random analysis probes");
  sub->add_flag("--quiet", f.quiet, "only print warnings and errors");
}

mfg::RunContext context(const Flags& f) {
  mfg::RunContext ctx;
  ctx.cfg = mfg::load_config(f.config);
  if (!f.level_override.empty()) ctx.cfg.override_levels(f.level_override[0], f.level_override[1]);
  ctx.out_dir = f.out.empty() ? ctx.cfg.out_dir : f.out;
  ctx.threads = f.threads;
  ctx.seed = f.seed;
  return ctx;
}

void print_levels(const std::vector<mfg::LevelSummary>& levels) {
  fmt::print("{:>5} {:>6} {:>6} {:>7} {:>5} {:>11} {:>9} {:>11} {:>11} {:>10}\n", "level", "N", "Nt", "solver", "iters",
             "final_err", "inner", "res_F", "res_G", "seconds");
  for (const auto& s : levels)
    fmt::print("{:>5} {:>6} {:>6} {:>7} {:>5} {:>11.3e} {:>9.3f} {:>11.3e} {:>11.3e} {:>10.3f}\n", s.level, s.n, s.nt,
               s.solver, s.iterations, s.final_error, s.inner_avg, s.residual_F, s.residual_G,
               s.interpolation_seconds + s.solve_seconds);
}

std::string opt_text(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "-"; }

int cmd_solve(const Flags& f) {
  const auto ctx = context(f);
  const auto r = mfg::run_solve(ctx);
  print_levels(r.levels);
  fmt::print("total {:.3f}s\n", r.result.seconds);
  return kOk;
}

int cmd_order_study(const Flags& f) {
  const auto ctx = context(f);
  const auto r = mfg::run_order_study(ctx);
  for (const auto& po : r.orders) {
    fmt::print("{} order, reference level {}\n", mfg::to_string(po.order), r.reference_level);
    fmt::print("{:>5} {:>12} {:>8} {:>12} {:>8}\n", "level", "err_U", "order", "err_M", "order");
    for (const auto& row : po.rows)
      fmt::print("{:>5} {:>12.4e} {:>8} {:>12.4e} {:>8}\n", row.level, row.err_U, opt_text(row.order_U), row.err_M,
                 opt_text(row.order_M));
    print_levels(po.levels);
  }
  return kOk;
}

int cmd_compare_newton(const Flags& f) {
  const auto ctx = context(f);
  const auto rows = mfg::run_compare_newton(ctx);
  fmt::print("{:>6} {:>10} {:>10} {:>8} {:>11} {:>11}\n", "N", "t_newton", "t_as", "ratio", "res_newton", "res_as");
  for (const auto& r : rows)
    fmt::print("{:>6} {:>10.3f} {:>10.3f} {:>8.2f} {:>11.3e} {:>11.3e}\n", r.n, r.newton_seconds, r.sweep_seconds,
               r.ratio(), std::max(r.newton_res_F, r.newton_res_G), std::max(r.sweep_res_F, r.sweep_res_G));
  return kOk;
}

int cmd_truncation(const Flags& f) {
  const auto ctx = context(f);
  for (const auto& s : mfg::run_truncation_study(ctx)) {
    fmt::print("{} order\n{:>5} {:>10} {:>12} {:>12} {:>12}\n", mfg::to_string(s.order), "level", "h", "F_strong",
               "G_strong", "G_weak");
    for (const auto& r : s.rows)
      fmt::print("{:>5} {:>10.3e} {:>12.4e} {:>12.4e} {:>12.4e}\n", r.level, r.h, r.F_strong, r.G_strong, r.G_weak);
    fmt::print("slopes: F {:.3f}  G strong {:.3f}  G weak {:.3f}\n", s.slope_F, s.slope_G_strong, s.slope_G_weak);
  }
  return kOk;
}

int cmd_spectra(const Flags& f) {
  const auto ctx = context(f);
  const auto s = mfg::run_spectra(ctx);
  fmt::print("level {} ({} unknowns)\n", s.level, s.unknowns);
  fmt::print("rho {:.6f}  lambda_max {:.6f}{:+.6f}i  relax bound {:.6f}\n", s.rho, s.lambda_max.real(),
             s.lambda_max.imag(), s.bound);
  fmt::print("alpha=1: converged {}  empirical rate {}\n", s.alpha1_converged, opt_text(s.alpha1_rate));
  fmt::print("alpha={:.4f}: converged {} in {} iterations\n", std::min(1.0, 0.9 * s.bound), s.relaxed_converged,
             s.relaxed_iterations);
  fmt::print("|rho(AB) - rho(BA)| = {:.3e}\n", s.commute_gap);
  return kOk;
}

int cmd_mass_audit(const Flags& f) {
  const auto ctx = context(f);
  const auto levels = mfg::run_mass_audit(ctx);
  for (const auto& s : levels) fmt::print("level {:>2}: max |mass - 1| = {:.3e}\n", s.level, s.max_mass_dev);
  return kOk;
}

int cmd_check(const Flags& f) {
  const auto ctx = context(f);
  fmt::print("config {} ok (hash {})\n", ctx.cfg.source, mfg::hash_hex(ctx.cfg.hash));
  if (!f.self_test) return kOk;
  bool all = true;
  for (const auto& c : mfg::run_self_test(ctx)) {
    fmt::print("{:<18} {}  {}\n", c.name, c.pass ? "PASS" : "FAIL", c.detail);
    all = all && c.pass;
  }
  return all ? kOk : kSelfTest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale alternating-sweep solver for mean field games"};
  app.require_subcommand(1);
  Flags flags;
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const Flags&);
  };
  const Entry entries[] = {
      {"solve", "multiscale or single-level solve", cmd_solve},
      {"order-study", "observed convergence orders against a finer reference", cmd_order_study},
      {"compare-newton", "Newton against alternating sweeping per grid size", cmd_compare_newton},
      {"truncation-study", "manufactured-solution truncation slopes", cmd_truncation},
      {"spectra", "sweep Jacobian spectrum and relaxation bound on a tiny grid", cmd_spectra},
      {"mass-audit", "per-frame mass of the finest density", cmd_mass_audit},
      {"check", "validate a config, optionally run the invariant suite", cmd_check},
  };
  std::vector<std::pair<CLI::App*, int (*)(const Flags&)>> subs;
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    add_common(sub, flags);
    if (std::string(e.name) == "check") sub->add_flag("--self-test", flags.self_test, "run the invariant suite");
    subs.emplace_back(sub, e.run);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(flags.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    for (const auto& [sub, run] : subs)
      if (sub->parsed()) return run(flags);
  } catch (const mfg::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kConfig;
  } catch (const mfg::MultiscaleError& e) {
    spdlog::error("solver failed at level {}: {}", e.level(), e.what());
    return kSolver;
  } catch (const mfg::NewtonError& e) {
    spdlog::error("newton: {}", e.what());
    return kSolver;
  } catch (const mfg::MarchError& e) {
    spdlog::error("march: {}", e.what());
    return kSolver;
  } catch (const mfg::AnalysisError& e) {
    spdlog::error("analysis: {}", e.what());
    return kSolver;
  } catch (const mfg::ProblemError& e) {
    spdlog::error("problem: {}", e.what());
    return kConfig;
  } catch (const mfg::GridError& e) {
    spdlog::error("grid: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
  return kOther;
}
