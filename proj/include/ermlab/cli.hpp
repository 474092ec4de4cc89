#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ermlab/harness.hpp"

namespace ermlab {

inline constexpr int kConfigSchema = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// Run configuration. JSON, `"schema": 1`, unknown fields rejected. `scenario`
// is either a shipped id or a full object; everything else has defaults.
struct RunConfig {
  std::optional<ScenarioSpec> scenario;
  std::vector<Eigen::Index> n_grid = default_n_grid();
  int seeds_per_n = 32;
  std::string pipeline = "erm";
  double lambda = 0.0;
  double eta = 0.1;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  int mc_reps = 200;

  struct Complexity {
    int delta_points = 24;
    NormMode norm = NormMode::PopulationL2;
  } complexity;

  struct Histogram {
    std::string rule = "sqrt";  // or "constant"
    int k = 1;
    int seeds = 200;
    double sigma = 0.5;
  } histogram;

  struct Nuisance {
    std::string experiment = "insample";  // insample | transfer | chi2
    std::vector<std::string> configs{"oracle", "donsker", "rich"};
    int seeds = 24;
    int runs = 200;
    Eigen::Index n = 2000;
    Eigen::Index n_aux = 1000;
    int probes = 16;
    std::vector<double> chi2_levels{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  } nuisance;
};

/// Throws ConfigParseError naming the line (syntax) or the field (content).
RunConfig parse_config(const std::string& text);

/// Sorted-key JSON with every field spelled out; parse(canonical(c)) round-trips.
std::string canonical_config(const RunConfig& cfg);

/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const std::string& canonical);

/// Runs the command line; `out`/`err` receive the human-readable text.
/// 0 success, 1 configuration or usage error, 2 results with solver flags.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ermlab
