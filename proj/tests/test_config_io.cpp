#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfg/experiments.hpp"

using namespace mfg;
using Catch::Matchers::ContainsSubstring;

namespace {

const char* kBase = R"([problem]
dim = 1
nu = 0.4
gamma = 2
T = 0.05
phi = cos(-2, 1)
u0 = sin(0.3, 1)
V = power
V_exponent = 2

[solver]
L0 = 3
L = 4
eps = 1e-8
alpha0 = 1
)";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mfg_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

FieldSeries sample(int dim) {
  const auto g = LevelGrid::make(dim, 4, 3, 0.25, 2);
  FieldSeries X(g);
  double v = 0.1;
  for (auto& x : X.data()) {
    x = v;
    v = v * 1.37 - 0.21;
  }
  return X;
}

}  // namespace

TEST_CASE("minimal config parses with defaults", "[config]") {
  const auto c = parse_config(kBase);
  CHECK(c.problem.dim == 1);
  CHECK(c.L0 == 3);
  CHECK(c.L == 4);
  CHECK(c.order == SchemeOrder::Second);
  CHECK(c.multiscale);
  CHECK(c.eps == 1e-8);
  CHECK(c.out_dir == "out");
  CHECK(c.hash == config_hash(kBase));
  CHECK(hash_hex(c.hash).size() == 16);
}

TEST_CASE("syntax errors carry the line", "[config]") {
  const std::string text = std::string(kBase) + "[output\n";
  CHECK_THROWS_WITH(parse_config(text, "bad.cfg"), ContainsSubstring("bad.cfg:16"));
}

TEST_CASE("unknown sections and keys are rejected", "[config]") {
  CHECK_THROWS_WITH(parse_config(std::string(kBase) + "[extra]\na = 1\n"), ContainsSubstring("unknown section [extra]"));
  CHECK_THROWS_WITH(parse_config(std::string(kBase) + "alpha = 1\n"), ContainsSubstring("[solver] alpha: unknown key"));
}

TEST_CASE("field errors name section and key", "[config]") {
  auto with = [](const std::string& extra) { return parse_config(std::string(kBase) + extra, "x.cfg"); };
  CHECK_THROWS_WITH(with("max_iters = many\n"), ContainsSubstring("x.cfg: [solver] max_iters: expected an integer"));
  CHECK_THROWS_WITH(with("eps_inner = 2\n"), ContainsSubstring("[solver] eps_inner: must lie in (0, 1)"));
  CHECK_THROWS_WITH(with("order = third\n"), ContainsSubstring("[solver] order"));
  CHECK_THROWS_WITH(with("alpha_finest = 1.5\n"), ContainsSubstring("[solver] alpha_finest"));
  CHECK_THROWS_WITH(with("[study]\nreference_level = 4\n"), ContainsSubstring("[study] reference_level"));
  CHECK_THROWS_AS(parse_config(std::string(kBase) + "[problem]\nV_profile = nope(1)\n"), ConfigError);
}

TEST_CASE("separable coupling needs a profile", "[config]") {
  std::string text = kBase;
  text.replace(text.find("V = power"), 9, "V = separable");
  CHECK_THROWS_WITH(parse_config(text), ContainsSubstring("V_profile: required for separable"));
}

TEST_CASE("level override checks its range", "[config]") {
  auto c = parse_config(kBase);
  c.override_levels(2, 5);
  CHECK(c.L0 == 2);
  CHECK(c.L == 5);
  CHECK_THROWS_AS(c.override_levels(5, 3), ConfigError);
}

TEST_CASE("single-level runs ignore the coarse hierarchy", "[config]") {
  const auto c = parse_config(std::string(kBase) + "multiscale = false\n");
  const auto o = c.multiscale_options();
  CHECK(o.L0 == o.L);
  CHECK(o.L == 4);
}

TEST_CASE("every shipped config validates", "[config]") {
  int count = 0;
  for (const auto& e : std::filesystem::directory_iterator(MFG_CONFIG_DIR)) {
    if (e.path().extension() != ".cfg") continue;
    INFO(e.path().string());
    CHECK_NOTHROW(load_config(e.path().string()));
    ++count;
  }
  CHECK(count >= 18);
}

TEST_CASE("table cells are quoted and exact", "[io]") {
  Table t;
  t.header = {"a", "b", "c"};
  t.add({0.1, 7LL, std::string("x,\"y\"")});
  CHECK_THROWS_AS(t.add({1.0}), IoError);
  const auto csv = t.to_csv(0xabcULL);
  CHECK(csv == "# config_hash=0000000000000abc\na,b,c\n0.10000000000000001,7,\"x,\"\"y\"\"\"\n");
}

TEST_CASE("field files round-trip exactly", "[io]") {
  const auto dir = scratch("roundtrip");
  ensure_dir(dir.string());
  for (int dim : {1, 2}) {
    const auto X = sample(dim);
    const auto csv = (dir / "f.csv").string(), bin = (dir / "f.bin").string();
    write_field_csv(csv, X, 42);
    write_field_binary(bin, X, 42);
    for (const auto& Y : {read_field_csv(csv), read_field_binary(bin)}) {
      CHECK(Y.grid().same_mesh(X.grid()));
      CHECK(Y.grid().level == 2);
      CHECK(std::equal(X.data().begin(), X.data().end(), Y.data().begin(), Y.data().end()));
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("damaged field files are rejected", "[io]") {
  const auto dir = scratch("damaged");
  ensure_dir(dir.string());
  const auto csv = (dir / "f.csv").string(), bin = (dir / "f.bin").string();
  write_field_csv(csv, sample(1), 1);
  write_field_binary(bin, sample(1), 1);

  auto text = slurp(csv);
  text.resize(text.rfind('\n', text.size() - 2) + 1);  // drop the last row
  std::ofstream(csv, std::ios::binary) << text;
  CHECK_THROWS_WITH(read_field_csv(csv), ContainsSubstring("expected"));

  auto raw = slurp(bin);
  raw.resize(raw.size() - 8);
  std::ofstream(bin, std::ios::binary) << raw;
  CHECK_THROWS_WITH(read_field_binary(bin), ContainsSubstring("truncated"));
  std::ofstream(bin, std::ios::binary) << "JUNKJUNK";
  CHECK_THROWS_WITH(read_field_binary(bin), ContainsSubstring("not a field file"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("repeated runs write identical outputs", "[io][determinism]") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  for (const auto& dir : {a, b}) {
    RunContext ctx;
    ctx.cfg = parse_config(kBase);
    ctx.out_dir = dir.string();
    run_solve(ctx);
  }
  int compared = 0;
  for (const auto& e : std::filesystem::directory_iterator(a)) {
    const auto name = e.path().filename().string();
    if (name == "timings.csv") continue;
    INFO(name);
    REQUIRE(std::filesystem::exists(b / name));
    CHECK(slurp(e.path()) == slurp(b / name));
    ++compared;
  }
  CHECK(compared >= 5);  // levels, two sweep logs, four field files
  const auto head = slurp(a / "levels.csv").substr(0, 31);
  CHECK(head == "# config_hash=" + hash_hex(config_hash(kBase)) + "\n");
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}
