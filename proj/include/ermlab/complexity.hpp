#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ermlab/classes.hpp"
#include "ermlab/common.hpp"
#include "ermlab/envelope.hpp"

namespace ermlab {

/// Finite class given by its values on the sample (n x m) and its norms.
/// With star_hull set, each member f stands for the segment {t f : t in [0, 1]}.
struct FiniteClass {
  Eigen::MatrixXd values;
  Eigen::VectorXd norms;
  bool star_hull = false;
};

/// sup over members with norm <= delta of (1/n) sum_i signs_i f(Z_i).
///  - LinearSpan: delta * sqrt(g' S^+ g), g = Phi' signs / n, S the second
///    moment (population) or Phi' Phi / n (empirical).
///  - L1Ball: max_j min(B, delta / ||phi_j||) |g_j|, the sup over the star hull
///    of the ball's vertices.
///  - Monotone, LipschitzMesh: exact Lagrangian path on the values at the
///    sample points. Population norms use lumped-mass weights of the
///    piecewise-linear interpolant, which never understate the exact norm.
double local_sup(const ClassDescriptor& cls, const Eigen::MatrixXd& points, const Eigen::VectorXd& signs,
                 double delta, NormMode mode, const Marginal& marginal = Marginal::uniform());

double local_sup(const FiniteClass& fc, const Eigen::VectorXd& signs, double delta);

struct McEstimate {
  double estimate = 0.0;
  double stderr_ = 0.0;
  int reps = 0;
};

/// Rademacher signs for replication `rep`; shared across deltas so curves use
/// common random numbers.
Eigen::VectorXd rademacher_signs(Eigen::Index n, std::uint64_t seed, int rep);

McEstimate empirical_local_rademacher(const ClassDescriptor& cls, const Eigen::MatrixXd& points, double delta,
                                      int reps, std::uint64_t seed, NormMode mode, int jobs = 1,
                                      const Marginal& marginal = Marginal::uniform());

McEstimate empirical_local_rademacher(const FiniteClass& fc, double delta, int reps, std::uint64_t seed);

/// Exact localized complexity of a finite class by enumerating all 2^n signs.
double exact_rademacher_oracle(const Eigen::MatrixXd& member_values, double delta, const Eigen::VectorXd& member_norms,
                               bool star_hull = false);

struct ComplexityCurve {
  std::vector<double> delta_grid;
  std::vector<double> estimates;  // isotonic in delta
  std::vector<double> raw;
  std::vector<double> stderrs;
  Eigen::Index n = 0;
  int reps = 0;
  NormMode norm_mode = NormMode::PopulationL2;
};

/// count log-spaced values in [1e-3 M, 2 M].
std::vector<double> default_delta_grid(double M, int count = 24);

ComplexityCurve complexity_curve(const ClassDescriptor& cls, const Eigen::MatrixXd& points,
                                 const std::vector<double>& grid, int reps, std::uint64_t seed, NormMode mode,
                                 int jobs = 1, const Marginal& marginal = Marginal::uniform());

/// Builds a curve from raw estimates; applies the isotonic smoothing.
ComplexityCurve make_curve(std::vector<double> grid, std::vector<double> raw, std::vector<double> stderrs,
                           Eigen::Index n, int reps, NormMode mode);

std::string curve_csv(const ComplexityCurve& curve);

/// sqrt((1/n) sum_j min(delta^2, R^2 lambda_j)).
double rkhs_local_bound(const Eigen::VectorXd& eigenvalues, double R, double delta, double n);

struct EnvelopeTransform {
  enum class Kind { LipschitzScale, StarHull, Sum };
  Kind kind = Kind::LipschitzScale;
  double param = 1.0;
  std::optional<Envelope> other;

  static EnvelopeTransform lipschitz(double L) { return {Kind::LipschitzScale, L, std::nullopt}; }
  static EnvelopeTransform star_hull(double M) { return {Kind::StarHull, M, std::nullopt}; }
  static EnvelopeTransform sum(Envelope e) { return {Kind::Sum, 0.0, std::move(e)}; }
};

/// LipschitzScale(L) realizes delta -> phi(delta / L); for L < 1 the log factor
/// keeps its scale, which gives a valid upper envelope inside the family.
Envelope transform_envelope(const Envelope& env, const EnvelopeTransform& t);

enum class CriticalMethod { EmpiricalCurve, EnvelopeFixedPoint, ClosedForm };

std::string_view to_string(CriticalMethod m);

struct CriticalRadius {
  double value = 0.0;
  CriticalMethod method = CriticalMethod::ClosedForm;
  std::optional<Envelope> envelope;
  double n = 0.0;
};

inline constexpr double kFixedPointRelTol = 1e-10;

/// Solves phi(delta) = sqrt(n) delta^2. Pure power laws use the closed form
/// unless `force_bisection`; otherwise bisection on [1e-12, 1].
CriticalRadius critical_radius_envelope(const Envelope& env, double n, bool force_bisection = false);

/// Smallest grid delta with estimate <= delta^2, refined linearly.
CriticalRadius critical_radius_empirical(const ComplexityCurve& curve);

/// Root of complexity(delta) = delta^2 for complexity(delta)/delta
/// nonincreasing, by bisection on [lo, hi] to relative tolerance.
double solve_complexity_fixed_point(const std::function<double(double)>& complexity, double lo, double hi,
                                    double rel_tol = kFixedPointRelTol);

}  // namespace ermlab
