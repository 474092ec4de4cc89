#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ermlab/common.hpp"
#include "ermlab/envelope.hpp"

namespace ermlab {

enum class ClassKind { LinearSpan, L1Ball, SparseLinear, Monotone, LipschitzMesh, HolderMesh, RkhsBall };

/// Feature map for the linear kinds. Identity uses the raw coordinates
/// (ambient_p == dim_d); Cosine and Hat are one-dimensional bases on [0, 1].
// Bins: indicators of p equal-width bins of [0, 1].
enum class FeatureBasis { Identity, Cosine, Hat, Bins };

enum class EntropyNorm { UniformL2, SupNorm };

std::string_view to_string(ClassKind kind);
ClassKind class_kind_from_string(std::string_view s);
std::string_view to_string(FeatureBasis basis);
FeatureBasis feature_basis_from_string(std::string_view s);

bool is_linear_kind(ClassKind kind);
bool is_mesh_kind(ClassKind kind);

/// Covariate distribution used by the simulations.
struct Marginal {
  enum class Kind { UniformCube, Gaussian };
  Kind kind = Kind::UniformCube;
  std::vector<double> scales;  // per-coordinate std dev, Gaussian only

  static Marginal uniform() { return {}; }
};

struct ClassDescriptor {
  ClassKind kind = ClassKind::LinearSpan;
  int dim_d = 1;
  std::optional<int> ambient_p;
  std::optional<int> sparsity_s;
  std::optional<double> smoothness_s;
  std::optional<double> lipschitz_L;
  std::optional<double> radius_B;
  std::optional<double> sup_bound_M;
  std::optional<double> rkhs_decay_beta;
  std::optional<double> rkhs_R;

  FeatureBasis basis = FeatureBasis::Identity;
  double envelope_coeff = 1.0;
  int series_terms = 128;  // RKHS eigenfunctions kept by the primal fitter

  // Filled in by make_class.
  std::optional<Envelope> envelope;

  int p() const { return ambient_p.value_or(0); }
  double M() const { return sup_bound_M.value_or(0.0); }
  double B() const { return radius_B.value_or(0.0); }
};

using ClassPtr = std::shared_ptr<const ClassDescriptor>;

/// Validates the descriptor and attaches its UniformL2 entropy envelope.
ClassPtr make_class(ClassDescriptor spec);

/// Entropy-integral envelope for the class, coefficient taken from
/// `envelope_coeff`. SupNorm is available for the smoothness classes only.
Envelope entropy_envelope(const ClassDescriptor& cls, EntropyNorm norm = EntropyNorm::UniformL2);

/// VC-subgraph dimension used for linear kinds: p + 2.
int vc_dimension(const ClassDescriptor& cls);

// Function handles -----------------------------------------------------------

struct LinearRep {
  Eigen::VectorXd theta;
};

/// Values at sorted knots; piecewise-linear in between, constant outside.
struct MeshRep {
  std::vector<double> knots;
  std::vector<double> values;
};

/// Coefficients on the RKHS eigenbasis sqrt(2) cos(pi j x), j = 1..J.
struct SeriesRep {
  Eigen::VectorXd theta;
};

/// f(x) = sum_i coeffs_i K(anchor_i, x).
struct KernelDualRep {
  Eigen::VectorXd coeffs;
  Eigen::MatrixXd anchors;
};

using Representation = std::variant<LinearRep, MeshRep, SeriesRep, KernelDualRep>;

class FunctionHandle {
 public:
  FunctionHandle(ClassPtr cls, Representation rep);

  const ClassDescriptor& cls() const { return *cls_; }
  const ClassPtr& class_ptr() const { return cls_; }
  const Representation& rep() const { return rep_; }

 private:
  ClassPtr cls_;
  Representation rep_;
};

FunctionHandle zero_function(const ClassPtr& cls);

enum class SupCheck { Enforce, Ignore };

/// Evaluates at each row of `points` (n x d). With SupCheck::Enforce a value
/// outside [-M, M] raises SupBoundViolated.
Eigen::VectorXd eval(const FunctionHandle& fh, const Eigen::MatrixXd& points,
                     SupCheck check = SupCheck::Enforce);

/// a * f + b * g. Both handles must share a representation type; mesh handles
/// on different knots are merged onto the union of knots.
FunctionHandle combine(double a, const FunctionHandle& f, double b, const FunctionHandle& g);

/// Checks the class constraint (l1 norm, monotonicity, Lipschitz/Holder mesh
/// bounds, RKHS norm) within `tol`.
bool satisfies_constraint(const FunctionHandle& fh, double tol = 1e-8);

// Feature maps and kernels ----------------------------------------------------

Eigen::MatrixXd feature_matrix(const ClassDescriptor& cls, const Eigen::MatrixXd& x);

/// E[phi(X) phi(X)^T] under the marginal.
Eigen::MatrixXd feature_second_moment(const ClassDescriptor& cls, const Marginal& marginal);

/// sup_x ||phi(x)||_2 over the support (infinite for Gaussian marginals).
double sup_feature_norm(const ClassDescriptor& cls, const Marginal& marginal);

/// Bin of x among `bins` equal-width bins of [0, 1]; values outside are clamped.
int bin_index(double x, int bins);

/// lambda_j = j^(-2 beta), j = 1..count.
Eigen::VectorXd rkhs_eigenvalues(double beta, int count);

/// Smallest J with lambda_{J+1} < 1e-10.
int rkhs_truncation(double beta);

/// n x J matrix of sqrt(2) cos(pi j x_i).
Eigen::MatrixXd rkhs_series_basis(const Eigen::VectorXd& x, int terms);

/// K(x, x') = sum_j lambda_j phi_j(x) phi_j(x'). Closed form through Bernoulli
/// polynomials for integer beta, truncated series otherwise.
double rkhs_kernel(double beta, double x, double xp);

Eigen::MatrixXd rkhs_gram(double beta, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Squared RKHS norm of a handle in the RKHS ball class.
double rkhs_norm_squared(const FunctionHandle& fh);

// Interpolation and sampling ------------------------------------------------

struct InterpConstants {
  double c_inf = 0.0;
  double beta = 0.5;
  bool fallback = false;
};

/// Largest beta reported for finite-dimensional classes.
inline constexpr double kLinearBetaCap = 1e6;

/// (c_inf, beta) with ||f - f'||_inf <= c_inf ||f - f'||^(1 - 1/(2 beta)).
InterpConstants interp_constants(const ClassDescriptor& cls, const Marginal& marginal = Marginal::uniform());

/// Random member of the class, deterministic in the seed:
///  - LinearSpan: uniform in the l2 ball of radius min(B, M / sup ||phi||).
///  - L1Ball: uniform in the l1 ball of radius B; SparseLinear: same on a
///    uniformly chosen support of size s.
///  - Monotone: Dirichlet increments on a 17-knot grid.
///  - LipschitzMesh: tanh of a Gaussian random walk as slopes on a 33-knot
///    grid, rescaled into [-M, M].
///  - HolderMesh: integral of a random cosine mixture on a 65-knot grid.
///  - RkhsBall: Gaussian series coefficients scaled to a uniform radius in [0, R].
FunctionHandle sample_member(const ClassPtr& cls, std::uint64_t seed);

/// Draws n points from the marginal.
Eigen::MatrixXd sample_points(const Marginal& marginal, int dim, int n, Rng& rng);

}  // namespace ermlab
