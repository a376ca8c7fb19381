#include "mfg/io.hpp"

#include <fmt/format.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mfg {

namespace {

std::string cell_text(const Table::Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return fmt::format("{:.17g}", *d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  const auto& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + '"';
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path + ": write failed");
}

double to_double(const std::string& s, const std::string& path) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw IoError(path + ": bad number '" + s + "'");
  return v;
}

long long to_int(const std::string& s, const std::string& path) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw IoError(path + ": bad integer '" + s + "'");
  return v;
}

static_assert(std::endian::native == std::endian::little, "binary field format assumes little-endian hosts");

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError(path + ": truncated header");
  return v;
}

}  // namespace

void Table::add(std::vector<Cell> row) {
  if (row.size() != header.size()) throw IoError("table row has the wrong number of columns");
  rows.push_back(std::move(row));
}

std::string Table::to_csv(std::uint64_t hash) const {
  std::string s = fmt::format("# config_hash={:016x}\n", hash);
  for (std::size_t k = 0; k < header.size(); ++k) s += (k ? "," : "") + header[k];
  s += '\n';
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.size(); ++k) s += (k ? "," : "") + cell_text(r[k]);
    s += '\n';
  }
  return s;
}

void write_table(const std::string& path, const Table& t, std::uint64_t hash) { write_text(path, t.to_csv(hash)); }

void write_field_csv(const std::string& path, const FieldSeries& X, std::uint64_t hash) {
  const auto& g = X.grid();
  fmt::memory_buffer b;
  fmt::format_to(std::back_inserter(b), "# config_hash={:016x}\n", hash);
  fmt::format_to(std::back_inserter(b), "# grid dim={} n={} nt={} T={:.17g} level={}\n", g.dim, g.n, g.nt, g.T,
                 g.level);
  const std::string_view header = g.dim == 1 ? "n,i,t,x,value\n" : "n,i,j,t,x,y,value\n";
  b.append(header.data(), header.data() + header.size());
  for (int k = 0; k <= g.nt; ++k) {
    const auto f = X.frame(k);
    const double t = g.t(k);
    for (std::size_t p = 0; p < g.points(); ++p) {
      const auto [x, y] = g.coords(p);
      if (g.dim == 1)
        fmt::format_to(std::back_inserter(b), "{},{},{:.17g},{:.17g},{:.17g}\n", k, p, t, x, f[p]);
      else
        fmt::format_to(std::back_inserter(b), "{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", k, p / g.n, p % g.n, t,
                       x, y, f[p]);
    }
  }
  write_text(path, fmt::to_string(b));
}

FieldSeries read_field_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::string line;
  LevelGrid g;
  bool have_grid = false;
  while (std::getline(in, line) && line.rfind("#", 0) == 0) {
    if (line.rfind("# grid ", 0) != 0) continue;
    int dim = 0, n = 0, nt = 0, level = -1;
    double T = 0;
    std::istringstream ss(line.substr(7));
    std::string kv;
    while (ss >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw IoError(path + ": malformed grid line");
      const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "dim") dim = static_cast<int>(to_int(val, path));
      else if (key == "n") n = static_cast<int>(to_int(val, path));
      else if (key == "nt") nt = static_cast<int>(to_int(val, path));
      else if (key == "T") T = to_double(val, path);
      else if (key == "level") level = static_cast<int>(to_int(val, path));
    }
    g = LevelGrid::make(dim, n, nt, T, level);
    have_grid = true;
  }
  if (!have_grid) throw IoError(path + ": missing grid line");
  // `line` now holds the header row
  FieldSeries X(g);
  const std::size_t cols = g.dim == 1 ? 5 : 7;
  std::size_t count = 0;
  std::vector<std::string> parts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    parts.clear();
    std::istringstream ss(line);
    std::string part;
    while (std::getline(ss, part, ',')) parts.push_back(part);
    if (parts.size() != cols) throw IoError(path + ": row with " + std::to_string(parts.size()) + " columns");
    const long long k = to_int(parts[0], path);
    long long p = to_int(parts[1], path);
    if (g.dim == 2) p = p * g.n + to_int(parts[2], path);
    if (k < 0 || k > g.nt || p < 0 || static_cast<std::size_t>(p) >= g.points())
      throw IoError(path + ": index out of range");
    X.frame(static_cast<int>(k))[static_cast<std::size_t>(p)] = to_double(parts.back(), path);
    ++count;
  }
  if (count != X.data().size()) throw IoError(path + ": expected " + std::to_string(X.data().size()) + " rows");
  return X;
}

void write_field_binary(const std::string& path, const FieldSeries& X, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  const auto& g = X.grid();
  out.write("MFGF", 4);
  put<std::uint32_t>(out, 1);
  put<std::int32_t>(out, g.dim);
  put<std::int32_t>(out, g.level);
  put<std::int32_t>(out, g.n);
  put<std::int32_t>(out, g.nt);
  put<double>(out, g.T);
  put<std::uint64_t>(out, hash);
  out.write(reinterpret_cast<const char*>(X.data().data()), static_cast<std::streamsize>(X.data().size_bytes()));
  if (!out) throw IoError(path + ": write failed");
}

FieldSeries read_field_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MFGF", 4) != 0) throw IoError(path + ": not a field file");
  if (get<std::uint32_t>(in, path) != 1) throw IoError(path + ": unsupported version");
  const int dim = get<std::int32_t>(in, path), level = get<std::int32_t>(in, path);
  const int n = get<std::int32_t>(in, path), nt = get<std::int32_t>(in, path);
  const double T = get<double>(in, path);
  (void)get<std::uint64_t>(in, path);
  FieldSeries X(LevelGrid::make(dim, n, nt, T, level));
  if (!in.read(reinterpret_cast<char*>(X.data().data()), static_cast<std::streamsize>(X.data().size_bytes())))
    throw IoError(path + ": truncated data");
  return X;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": " + ec.message());
}

}  // namespace mfg
