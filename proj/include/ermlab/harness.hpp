#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ermlab/classes.hpp"
#include "ermlab/nuisance.hpp"
#include "ermlab/oracle.hpp"

namespace ermlab {

// Scenarios ------------------------------------------------------------------

/// f0 = sample_member(cls) unless truth_cosine is set, in which case the
/// regression function is sum_j c_j phi_j in the d = 1 cosine basis and f0 is
/// its projection onto the (LinearSpan) class. truth_mesh gives f0 directly as
/// values on equally spaced knots of [0, 1] (Monotone and Lipschitz classes).
struct ScenarioSpec {
  std::string id;
  ClassDescriptor cls;
  double sigma = 0.5;
  std::uint64_t seed = 1;
  std::vector<double> truth_cosine;
  std::vector<double> truth_mesh;
};

Scenario build_scenario(const ScenarioSpec& spec);

/// Scenarios exercised by the sweeps, all with exact solvers.
std::vector<ScenarioSpec> shipped_scenarios();

/// Looks up a shipped scenario by id.
ScenarioSpec shipped_scenario(std::string_view id);

/// Exponent of n in the regret rate implied by the class envelope, ignoring logs.
double predicted_regret_exponent(const ClassDescriptor& cls);

// Sweeps ---------------------------------------------------------------------

struct SweepConfig {
  ScenarioSpec scenario;
  std::vector<Eigen::Index> n_grid;
  int seeds_per_n = 32;
  std::string pipeline = "erm";  // "erm" or "tikhonov"
  double lambda = 0.0;           // tikhonov only
  double eta = 0.1;
  int jobs = 1;
  std::uint64_t master_seed = 1;
};

std::vector<Eigen::Index> default_n_grid();

/// log10(max n / min n); rate fits want at least 1.5.
double grid_decades(const std::vector<Eigen::Index>& n_grid);

/// One record per (n, seed) in (n, seed index) order. Per-record solver
/// failures are flagged ("error") and never abort the sweep.
std::vector<RegretRecord> run_sweep(const SweepConfig& cfg);

std::string sweep_csv(const std::vector<RegretRecord>& records);

/// True for records produced by an exact solver without flags.
bool exact_record(const RegretRecord& r);

enum class Response { Regret, L2Error };

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
  int n_points = 0;
  double median_slope = 0.0;  // same fit through seed medians
};

/// Least squares line through (log n, log seed-mean response).
RateFit fit_rate(const std::vector<RegretRecord>& records, Response response);

/// Ordinary least squares slope of log y on log x with its standard error.
RateFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

// PAC coverage ---------------------------------------------------------------

using BoundFamily = std::function<double(Eigen::Index n, double eta)>;

/// Fraction of records with regret <= bound(n, eta).
double pac_coverage(const std::vector<RegretRecord>& records, const BoundFamily& bound, double eta);

std::vector<double> coverage_curve(const std::vector<RegretRecord>& records, const BoundFamily& bound,
                                   const std::vector<double>& etas);

/// delta_n^2 + log(1/eta) / n with delta_n from the class envelope.
BoundFamily regret_bound_shape(const ClassDescriptor& cls);

/// Smallest C such that C * shape covers the `quantile` share of training records at eta.
double calibrate_constant(const std::vector<RegretRecord>& train, const BoundFamily& shape, double eta,
                          double quantile);

// Histogram union bound --------------------------------------------------------

struct HistogramConfig {
  enum class Rule { Sqrt, Constant };
  Rule rule = Rule::Sqrt;
  int constant_k = 1;
  std::vector<Eigen::Index> n_grid;
  int seeds = 200;
  double sigma = 0.5;
  double eta = 0.1;
  std::uint64_t master_seed = 1;
  int jobs = 1;
};

struct HistogramRecord {
  Eigen::Index n = 0;
  std::uint64_t seed = 0;
  int K = 0;
  double max_sq_error = 0.0;
  bool covered = false;  // every bin within its eta/K Hoeffding bound
  int resamples = 0;     // draws discarded because a bin was empty
};

int histogram_bins(const HistogramConfig& cfg, Eigen::Index n);

/// f(x) = sin(2 pi x) / 2 with truncated Gaussian noise; K(n) equal-width bins.
std::vector<HistogramRecord> histogram_union_experiment(const HistogramConfig& cfg);

/// Slope of log seed-mean max error against log n (K = 1) or log(K log K / n).
RateFit histogram_rate(const std::vector<HistogramRecord>& records);

double histogram_coverage(const std::vector<HistogramRecord>& records);

std::string histogram_csv(const std::vector<HistogramRecord>& records);

// Uniform local concentration ------------------------------------------------

/// Per seed, the max over probes f of (P_n - P){loss(f0) - loss(f)} /
/// (sigma_f delta_n + delta_n^2). Probes are the ERM path f0 + t (f-hat - f0),
/// t in {1/4, 1/2, 3/4, 1}, and `fixed_probes` class members mixed with f0.
std::vector<double> local_concentration_stats(const ScenarioSpec& spec, Eigen::Index n, int seeds,
                                              std::uint64_t master_seed, int fixed_probes = 16, int jobs = 1);

double quantile(std::vector<double> v, double q);

// Nuisance experiments -------------------------------------------------------

/// Misspecified weighted-ERM world: F = cosine span p = 2, f* a cosine series
/// with p = 5, logistic propensity on cosine p = 3 features.
MissingDesign transfer_design();

/// Monotone world for in-sample DR learning.
MissingDesign insample_design();

ClassPtr cosine_features(int p);
ClassPtr bin_features(int p);

struct TransferConfig {
  int runs = 200;
  Eigen::Index n = 2000;
  Eigen::Index n_aux = 1000;
  int probes = 16;
  std::uint64_t master_seed = 1;
  int jobs = 1;
};

std::vector<TransferReport> transfer_runs(const MissingDesign& design, const TransferConfig& cfg);

struct Chi2Point {
  double chi2 = 0.0;
  double mean_excess = 0.0;  // seed mean of Reg(f; w0) - Reg(f; w-hat)
};

/// Weights w0 (1 + t sqrt(2) cos(pi x)) so that chi2 = t^2 exactly.
std::vector<Chi2Point> chi2_scaling(const MissingDesign& design, const std::vector<double>& chi2_levels,
                                    Eigen::Index n, int seeds, std::uint64_t master_seed, int jobs = 1);

struct NuisanceRecord {
  std::string config;
  Eigen::Index n = 0;
  std::uint64_t seed = 0;
  double l2_error = 0.0;
  double propensity_error = 0.0;
  double outcome_error = 0.0;
};

/// "oracle", "donsker" (cosine p = 3 nuisances) or "rich" (n/4 bins).
NuisanceConfig insample_config(const std::string& name, Eigen::Index n, const MissingDesign& design);

std::vector<NuisanceRecord> insample_sweep(const MissingDesign& design, const std::string& config,
                                           const std::vector<Eigen::Index>& n_grid, int seeds,
                                           std::uint64_t master_seed, int jobs = 1);

RateFit fit_nuisance_rate(const std::vector<NuisanceRecord>& records);

std::string nuisance_csv(const std::vector<NuisanceRecord>& records);

}  // namespace ermlab
