#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ermlab/classes.hpp"

namespace ermlab {

struct Dataset {
  Eigen::MatrixXd x;                  // n x d
  Eigen::VectorXd y;                  // n
  std::optional<Eigen::VectorXd> obs;  // 0/1 observation indicator
  std::optional<std::vector<int>> fold_id;

  Eigen::Index n() const { return y.size(); }
  void validate() const;
};

/// Loss catalogue. Weighted multiplies the base loss by per-point weights;
/// PlugInProduct is squared loss against plug-in pseudo-outcomes g(Z_i),
/// carried in the form m1(f) m2(g) + r1(f) + r2(g) with m1 = f, m2 = -2g,
/// r1 = f^2, r2 = g^2.
struct LossSpec {
  enum class Kind { Squared, Logistic, Weighted, PlugInProduct };
  Kind kind = Kind::Squared;
  double clip_M = std::numeric_limits<double>::infinity();
  std::shared_ptr<const LossSpec> base;  // Weighted only
  Eigen::VectorXd weights;               // Weighted only
  Eigen::VectorXd pseudo;                // PlugInProduct only

  static LossSpec squared() { return {}; }
  static LossSpec logistic() {
    LossSpec l;
    l.kind = Kind::Logistic;
    return l;
  }
  static LossSpec weighted(LossSpec base, Eigen::VectorXd w);
  static LossSpec plug_in(Eigen::VectorXd g);
};

/// Per-point losses for predictions `f` on `data`.
Eigen::VectorXd pointwise_loss(const LossSpec& loss, const Eigen::VectorXd& f, const Dataset& data);

/// (1/n) sum_i loss(Z_i, f).
double empirical_risk(const LossSpec& loss, const FunctionHandle& fh, const Dataset& data);

// Exact solvers on value vectors --------------------------------------------

/// Weighted pool-adjacent-violators on an ordered sequence.
std::vector<double> pava(const std::vector<double>& y, const std::vector<double>& w);

/// argmin sum_i w_i (y_i - f_i)^2 over |f_{i+1} - f_i| <= gaps_i, |f_i| <= M.
/// Dynamic programming on the piecewise-linear derivative of the value
/// function; exact up to floating point.
std::vector<double> lipschitz_project(const std::vector<double>& y, const std::vector<double>& w,
                                      const std::vector<double>& gaps, double M);

// Fitters ---------------------------------------------------------------------

struct SolverMeta {
  std::string solver;
  int iters = 0;
  double gap = 0.0;
  bool converged = true;
  double lambda = 0.0;  // Lagrange multiplier for ball-constrained fits
};

struct FitResult {
  FunctionHandle fh;
  SolverMeta meta;
};

struct FitOptions {
  std::optional<Eigen::VectorXd> weights;  // positive per-point weights
  bool allow_rank_deficient = true;        // otherwise RankDeficient
  int max_iters = 20000;
  double tol = 1e-10;
};

/// Minimum-norm (weighted) least squares over the span.
FitResult fit_least_squares(const Dataset& data, const ClassPtr& cls, const FitOptions& opt = {});

/// Away-step Frank-Wolfe on the l1 ball with exact line search. The reported
/// gap is the Frank-Wolfe duality gap, an upper bound on suboptimality.
FitResult fit_l1_ball(const Dataset& data, const ClassPtr& cls, const FitOptions& opt = {});

/// Weighted isotonic regression clipped to [-M, M]. Ties in x are pooled.
FitResult fit_isotonic(const Dataset& data, const ClassPtr& cls, const FitOptions& opt = {});

/// Least squares over the Lipschitz class, exact.
FitResult fit_lipschitz(const Dataset& data, const ClassPtr& cls, const FitOptions& opt = {});

struct KernelRidgeOptions {
  double lambda = 0.0;
  bool ball_mode = false;  // tune lambda so that ||f||_H hits R
};

/// Dual kernel ridge: (K + n lambda I) a = y.
FitResult fit_kernel_ridge(const Dataset& data, const ClassPtr& cls, const KernelRidgeOptions& opt);

/// RKHS-ball least squares in the truncated eigenbasis (series_terms terms):
/// minimum-norm solution if it lies inside the ball, otherwise the Lagrangian
/// solution with multiplier chosen so that the RKHS norm equals R.
FitResult fit_rkhs_ball(const Dataset& data, const ClassPtr& cls, const FitOptions& opt = {});

/// Squared-loss ERM for the class kind (OLS, Frank-Wolfe, PAVA, Lipschitz DP,
/// RKHS ball).
FitResult fit_erm(const Dataset& data, const ClassPtr& cls, const FitOptions& opt = {});

/// Minimizer of P_n loss(f) + (lambda / 2) ||f||_n^2. For squared loss this is
/// the base ERM on y / (1 + lambda / 2); logistic loss is supported on the
/// LinearSpan class through Newton's method.
FitResult fit_tikhonov(const Dataset& data, const ClassPtr& cls, const LossSpec& loss, double lambda,
                       const FitOptions& opt = {});

/// Weighted least-squares ERM; rejects nonpositive or non-finite weights.
FitResult fit_weighted_erm(const Dataset& data, const Eigen::VectorXd& weights, const ClassPtr& cls,
                           const FitOptions& opt = {});

/// Objective (1/n) sum w_i (y_i - x_i' theta)^2 used by the l1 fitter.
double linear_weighted_mse(const Dataset& data, const ClassDescriptor& cls, const Eigen::VectorXd& theta,
                           const std::optional<Eigen::VectorXd>& weights = std::nullopt);

}  // namespace ermlab
