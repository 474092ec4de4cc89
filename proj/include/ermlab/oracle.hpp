#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ermlab/classes.hpp"
#include "ermlab/erm.hpp"

namespace ermlab {

/// Gaussian noise truncated to [-4 sigma, 4 sigma] so that losses stay bounded.
struct TruncatedNoise {
  double sigma = 0.0;
  static constexpr double kCut = 4.0;

  double variance() const;
  double draw(Rng& rng) const;
};

struct Scenario {
  std::string id;
  ClassPtr cls;
  FunctionHandle f0;                    // best in class
  std::optional<FunctionHandle> fstar;  // regression function when it differs from f0
  Marginal marginal;
  TruncatedNoise noise;
  std::uint64_t seed = 0;

  const FunctionHandle& regression() const { return fstar ? *fstar : f0; }
};

/// Well-specified scenario: f0 = f* = sample_member(cls, derived seed).
Scenario make_scenario(std::string id, ClassPtr cls, double sigma, std::uint64_t seed,
                       Marginal marginal = Marginal::uniform());

/// argmin over a d = 1 LinearSpan of E[u(X) (target(X) - f(X))^2] under the
/// uniform marginal, by quadrature; u = 1 when empty.
FunctionHandle l2_projection(const ClassPtr& linear_cls, const FunctionHandle& target,
                             const std::function<double(double)>& u = {});

/// Misspecified scenario: regression function fstar, f0 its L2 projection
/// onto the LinearSpan `cls`.
Scenario make_misspecified_scenario(std::string id, ClassPtr cls, FunctionHandle fstar, double sigma,
                                    std::uint64_t seed);

/// n draws of (X, Y = f*(X) + noise).
Dataset draw_data(const Scenario& sc, Eigen::Index n, std::uint64_t seed);

struct NormInfo {
  double value = 0.0;
  bool monte_carlo = false;  // quadrature unavailable; value has stderr below
  double stderr_ = 0.0;
};

/// ||f - g||^2 under the marginal: closed form for matching linear or series
/// representations, exact piecewise integration for meshes, composite
/// Gauss-Legendre quadrature for other pairs with d <= 2, and 10^6-draw Monte
/// Carlo beyond that.
NormInfo l2_distance_sq(const FunctionHandle& f, const FunctionHandle& g, const Marginal& marginal);

double l2_norm_sq(const FunctionHandle& f, const Marginal& marginal);

/// sigma_trunc^2 + ||f* - f||^2.
double population_risk(const Scenario& sc, const FunctionHandle& fh, bool* monte_carlo = nullptr);

double regret(const Scenario& sc, const FunctionHandle& fh);

/// (P_n - P){loss(f0) - loss(fh)} for squared loss.
double fluctuation(const Scenario& sc, const Dataset& data, const FunctionHandle& fh);

struct RegretRecord {
  Eigen::Index n = 0;
  std::uint64_t seed = 0;
  std::string scenario;
  double emp_risk = 0.0;
  double pop_risk = 0.0;
  double regret = 0.0;
  double l2_error = 0.0;
  double fluctuation = 0.0;
  std::string flags;
};

RegretRecord make_record(const Scenario& sc, const Dataset& data, const FitResult& fit, std::uint64_t seed);

std::string record_csv_header();
std::string record_csv_row(const RegretRecord& r);

struct ProbeStats {
  double bernstein = 0.0;  // max Var(loss diff) / regret
  double kappa = 0.0;      // min regret / ||f - f0||^2
  double lipschitz = 0.0;  // max ||loss diff|| / ||f - f0||
  int used = 0;
  int skipped = 0;
};

/// Probes f0 + t (h - f0), h = sample_member, t in {0.01, 0.1, 1}. Variances
/// and loss-difference norms share one Monte Carlo sample of `mc_draws` points.
ProbeStats probe_conditions(const Scenario& sc, int probe_count, std::uint64_t seed, int mc_draws = 100000);

double bernstein_ratio(const Scenario& sc, int probe_count, std::uint64_t seed);

struct Curvature {
  double kappa_hat = 0.0;
  double L_hat = 0.0;
};

Curvature curvature_ratio(const Scenario& sc, int probe_count, std::uint64_t seed);

/// Population Tikhonov minimizer over a LinearSpan with linear f*: the
/// minimizer of R(f) + (lambda/2) ||f||^2, which is f* / (1 + lambda/2).
FunctionHandle population_tikhonov_minimizer(const Scenario& sc, double lambda);

/// R(f) + (lambda/2) ||f||^2.
double regularized_population_risk(const Scenario& sc, const FunctionHandle& fh, double lambda);

/// Composite Gauss-Legendre rule on [0, 1]: `panels` panels of 8 nodes.
void gauss_legendre_unit(int panels, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace ermlab
