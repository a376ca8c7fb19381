#include "mfg/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mfg/functions.hpp"

namespace mfg {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>> kKeys = {
    {"experiment", {"name"}},
    {"problem",
     {"dim", "nu", "gamma", "T", "phi", "u0", "mT", "V", "V_exponent", "V_scale", "V_profile", "V0", "V0_exponent",
      "grid_base", "time_base"}},
    {"solver",
     {"order", "L0", "L", "multiscale", "eps", "eps_inner", "max_inner", "max_iters", "alpha0", "alpha_growth", "alpha_late",
      "late_factor", "guard", "alpha_floor", "level_growth", "alpha_finest", "coarse", "interpolation", "newton_tol",
      "newton_max_iters"}},
    {"study", {"orders", "reference_level", "compare_levels", "truncation_levels", "spectra_level"}},
    {"output", {"dir", "fields", "binary"}},
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::string source) : tree_(tree), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(source_ + ": [" + section_of(key) + "] " + name_of(key) + ": " + what);
  }

  std::optional<std::string> raw(const std::string& key) const {
    if (auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'))) return trim(*v);
    return std::nullopt;
  }

  std::string str(const std::string& key, const std::string& fallback) const { return raw(key).value_or(fallback); }

  double real(const std::string& key, double fallback) const {
    const auto v = raw(key);
    return v ? to_real(key, *v) : fallback;
  }

  std::optional<double> optional_real(const std::string& key) const {
    const auto v = raw(key);
    if (!v) return std::nullopt;
    return to_real(key, *v);
  }

  int integer(const std::string& key, int fallback) const {
    const auto v = raw(key);
    return v ? to_int(key, *v) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "0") return false;
    fail(key, "expected true or false, got '" + *v + "'");
  }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    const auto v = raw(key);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_int(key, trim(item)));
    return out;
  }

  TrigPoly function(const std::string& key, const TrigPoly& fallback) const {
    const auto v = raw(key);
    if (!v) return fallback;
    try {
      return catalog::parse(*v);
    } catch (const CatalogError& e) {
      fail(key, e.what());
    }
  }

 private:
  static std::string section_of(const std::string& key) { return key.substr(0, key.find('.')); }
  static std::string name_of(const std::string& key) { return key.substr(key.find('.') + 1); }

  double to_real(const std::string& key, const std::string& v) const {
    double x = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) fail(key, "expected a number, got '" + v + "'");
    return x;
  }

  int to_int(const std::string& key, const std::string& v) const {
    int x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) fail(key, "expected an integer, got '" + v + "'");
    return x;
  }

  const pt::ptree& tree_;
  std::string source_;
};

Coupling read_coupling(const Reader& r, const std::string& prefix, const Coupling& fallback) {
  const auto kind = r.raw("problem." + prefix);
  if (!kind) return fallback;
  if (*kind == "zero") return Coupling::zero();
  if (*kind == "power") return Coupling::local_power(r.real("problem." + prefix + "_exponent", 2.0));
  if (*kind == "separable") {
    if (!r.raw("problem." + prefix + "_profile")) r.fail("problem." + prefix + "_profile", "required for separable");
    return Coupling::separable(r.real("problem." + prefix + "_scale", 1.0),
                               r.function("problem." + prefix + "_profile", TrigPoly{}));
  }
  r.fail("problem." + prefix, "expected zero, power or separable, got '" + *kind + "'");
}

}  // namespace

std::uint64_t config_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SchemeOrder parse_order(const std::string& s) {
  if (s == "second" || s == "2") return SchemeOrder::Second;
  if (s == "first" || s == "1") return SchemeOrder::First;
  throw ConfigError("unknown scheme order '" + s + "' (expected first or second)");
}

MarchOptions ExperimentConfig::march_options() const {
  MarchOptions m;
  m.eps_inner = eps_inner;
  m.max_inner = max_inner;
  return m;
}

MultiscaleOptions ExperimentConfig::multiscale_options() const {
  MultiscaleOptions o;
  o.L0 = multiscale ? L0 : L;
  o.L = L;
  o.grid = grid;
  o.order = order;
  o.march = march_options();
  o.coarse = coarse;
  o.interpolation = interpolation;
  o.eps = eps;
  o.max_iters = max_iters;
  o.schedule = schedule;
  o.level_growth = level_growth;
  o.alpha_finest = multiscale ? alpha_finest : std::nullopt;
  o.newton = newton;
  return o;
}

void ExperimentConfig::override_levels(int l0, int l) {
  if (l0 < 2 || l0 > l) throw ConfigError("level override needs 2 <= L0 <= L");
  L0 = l0;
  L = l;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    const auto it = kKeys.find(section);
    if (it == kKeys.end()) {
      if (body.empty()) throw ConfigError(source + ": key '" + section + "' outside a section");
      throw ConfigError(source + ": unknown section [" + section + "]");
    }
    for (const auto& kv : body)
      if (!it->second.count(kv.first))
        throw ConfigError(source + ": [" + section + "] " + kv.first + ": unknown key");
  }

  Reader r(tree, source);
  ExperimentConfig c;
  c.source = source;
  c.hash = config_hash(text);
  c.name = r.str("experiment.name", "experiment");

  auto& p = c.problem;
  p.dim = r.integer("problem.dim", 1);
  p.nu = r.real("problem.nu", p.nu);
  p.gamma = r.real("problem.gamma", p.gamma);
  p.T = r.real("problem.T", p.T);
  p.phi = r.function("problem.phi", p.phi);
  p.u0 = r.function("problem.u0", p.u0);
  p.mT = r.function("problem.mT", p.dim == 1 ? catalog::density_1d() : catalog::density_2d());
  p.V = read_coupling(r, "V", p.V);
  p.V0 = read_coupling(r, "V0", p.V0);
  c.grid.base = r.integer("problem.grid_base", 1);
  c.grid.time_base = r.integer("problem.time_base", c.grid.base);
  try {
    p.validate();
  } catch (const ProblemError& e) {
    throw ConfigError(source + ": [problem] " + e.what());
  }
  if (c.grid.base < 1 || c.grid.time_base < 1) r.fail("problem.grid_base", "grid bases must be positive");

  try {
    c.order = parse_order(r.str("solver.order", "second"));
  } catch (const ConfigError& e) {
    r.fail("solver.order", e.what());
  }
  c.L0 = r.integer("solver.L0", c.L0);
  c.L = r.integer("solver.L", c.L);
  c.multiscale = r.boolean("solver.multiscale", true);
  c.eps = r.real("solver.eps", c.eps);
  c.eps_inner = r.real("solver.eps_inner", c.eps_inner);
  c.max_iters = r.integer("solver.max_iters", c.max_iters);
  c.max_inner = r.integer("solver.max_inner", c.max_inner);
  c.schedule.alpha0 = r.real("solver.alpha0", 1.0);
  c.schedule.growth = r.real("solver.alpha_growth", 1.0);
  c.schedule.alpha_late = r.optional_real("solver.alpha_late");
  c.schedule.late_factor = r.real("solver.late_factor", 5.0);
  c.schedule.guard = r.boolean("solver.guard", true);
  c.schedule.alpha_floor = r.real("solver.alpha_floor", 1e-3);
  c.level_growth = r.real("solver.level_growth", 1.0);
  c.alpha_finest = r.optional_real("solver.alpha_finest");
  const auto coarse = r.str("solver.coarse", "sweep");
  if (coarse == "sweep")
    c.coarse = CoarseSolver::RelaxedSweep;
  else if (coarse == "newton")
    c.coarse = CoarseSolver::Newton;
  else
    r.fail("solver.coarse", "expected sweep or newton, got '" + coarse + "'");
  const auto interp = r.str("solver.interpolation", "linear");
  if (interp == "linear")
    c.interpolation = Interpolation::Linear;
  else if (interp == "cubic")
    c.interpolation = Interpolation::Cubic;
  else
    r.fail("solver.interpolation", "expected linear or cubic, got '" + interp + "'");
  c.newton.tol = r.real("solver.newton_tol", c.newton.tol);
  c.newton.max_newton = r.integer("solver.newton_max_iters", c.newton.max_newton);

  if (c.L0 < 2 || c.L0 > c.L || c.L > 24) r.fail("solver.L", "levels need 2 <= L0 <= L <= 24");
  if (!(c.eps > 0.0 && c.eps < 1.0)) r.fail("solver.eps", "must lie in (0, 1)");
  if (!(c.eps_inner > 0.0 && c.eps_inner < 1.0)) r.fail("solver.eps_inner", "must lie in (0, 1)");
  if (c.max_iters < 1) r.fail("solver.max_iters", "must be positive");
  if (c.max_inner < 1) r.fail("solver.max_inner", "must be positive");
  try {
    c.schedule.validate();
  } catch (const std::invalid_argument& e) {
    r.fail("solver.alpha0", e.what());
  }
  if (!(c.level_growth >= 1.0)) r.fail("solver.level_growth", "must be >= 1");
  if (c.alpha_finest && !(*c.alpha_finest > 0.0 && *c.alpha_finest <= 1.0))
    r.fail("solver.alpha_finest", "must lie in (0, 1]");
  if (!(c.newton.tol > 0.0)) r.fail("solver.newton_tol", "must be positive");

  if (const auto orders = r.raw("study.orders")) {
    c.study_orders.clear();
    std::stringstream ss(*orders);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        c.study_orders.push_back(parse_order(trim(item)));
      } catch (const ConfigError& e) {
        r.fail("study.orders", e.what());
      }
    }
  }
  c.reference_level = r.integer("study.reference_level", 0);
  if (c.reference_level != 0 && c.reference_level <= c.L)
    r.fail("study.reference_level", "must exceed solver.L");
  c.compare_levels = r.int_list("study.compare_levels");
  c.truncation_levels = r.int_list("study.truncation_levels");
  c.spectra_level = r.integer("study.spectra_level", 2);
  for (int l : c.compare_levels)
    if (l < 2 || l > 24) r.fail("study.compare_levels", "levels must lie in [2, 24]");
  for (int l : c.truncation_levels)
    if (l < 2 || l > 24) r.fail("study.truncation_levels", "levels must lie in [2, 24]");

  c.out_dir = r.str("output.dir", "out");
  c.write_fields = r.boolean("output.fields", true);
  c.write_binary = r.boolean("output.binary", false);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace mfg
