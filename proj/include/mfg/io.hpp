#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mfg/grid.hpp"

namespace mfg {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A CSV table. Doubles are written with 17 significant digits so a re-read
/// reproduces them exactly.
struct Table {
  using Cell = std::variant<double, long long, std::string>;
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
  std::string to_csv(std::uint64_t hash) const;
};

void write_table(const std::string& path, const Table& t, std::uint64_t hash);

/// Field CSV: "# config_hash=..." and "# grid dim=.. n=.. nt=.. T=.. level=..",
/// then columns n, i[, j], t, x[, y], value.
void write_field_csv(const std::string& path, const FieldSeries& X, std::uint64_t hash);
FieldSeries read_field_csv(const std::string& path);

/// Little-endian binary: magic "MFGF", u32 version, i32 dim, level, n, nt,
/// f64 T, u64 hash, then frames() * points() f64 values.
void write_field_binary(const std::string& path, const FieldSeries& X, std::uint64_t hash);
FieldSeries read_field_binary(const std::string& path);

/// Creates the directory and its parents.
void ensure_dir(const std::string& dir);

}  // namespace mfg
