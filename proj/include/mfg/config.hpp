#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfg/multiscale.hpp"
#include "mfg/problem.hpp"

namespace mfg {

/// Bad configuration: syntax (with line) or a field that fails validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string name;
  std::string source;  // file path or "<string>"
  std::uint64_t hash = 0;

  ProblemSpec problem;
  GridOptions grid;

  SchemeOrder order = SchemeOrder::Second;
  int L0 = 4, L = 8;
  bool multiscale = true;  // false: single level L from the naive guess
  double eps = 1e-6;
  double eps_inner = 1e-7;
  int max_inner = 50;
  int max_iters = 200;
  RelaxSchedule schedule;
  double level_growth = 1.0;
  std::optional<double> alpha_finest;
  CoarseSolver coarse = CoarseSolver::RelaxedSweep;
  Interpolation interpolation = Interpolation::Linear;
  NewtonOptions newton;

  // studies
  std::vector<SchemeOrder> study_orders{SchemeOrder::Second};
  int reference_level = 0;  // 0: L + 1
  std::vector<int> compare_levels;
  std::vector<int> truncation_levels;
  int spectra_level = 2;

  // output
  std::string out_dir = "out";
  bool write_fields = true;
  bool write_binary = false;

  MarchOptions march_options() const;
  MultiscaleOptions multiscale_options() const;
  /// Applies --level-override.
  void override_levels(int l0, int l);
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<string>");
ExperimentConfig load_config(const std::string& path);

/// 64-bit FNV-1a of the raw config text; recorded in every output file.
std::uint64_t config_hash(const std::string& text);
std::string hash_hex(std::uint64_t h);

/// Parses "second"/"first".
SchemeOrder parse_order(const std::string& s);

}  // namespace mfg
