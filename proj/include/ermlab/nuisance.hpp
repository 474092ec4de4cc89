#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ermlab/classes.hpp"
#include "ermlab/erm.hpp"
#include "ermlab/oracle.hpp"

namespace ermlab {

// Missing-at-random world ------------------------------------------------------
//
// X ~ U[0, 1], Y = f*(X) + noise, A ~ Bernoulli(pi0(X)) with
// pi0(x) = sigmoid(eta' phi(x)) for LinearSpan features phi. Y is observed
// only when A = 1; unobserved responses are stored as 0.

struct MissingDesign {
  Scenario sc;
  ClassPtr propensity_features;
  Eigen::VectorXd eta;

  Eigen::VectorXd propensity(const Eigen::MatrixXd& x) const;
};

MissingDesign make_missing_design(Scenario sc, ClassPtr propensity_features, Eigen::VectorXd eta);

Dataset draw_missing(const MissingDesign& design, Eigen::Index n, std::uint64_t seed);

// Nuisance configuration and fits -------------------------------------------

enum class FitMode { SampleSplit, CrossFit, InSample, OracleTruth };
enum class NuisanceTarget { Weight, PseudoOutcome, Propensity };

std::string_view to_string(FitMode m);
FitMode fit_mode_from_string(std::string_view s);

struct NuisanceConfig {
  ClassPtr estimator_class;  // LinearSpan; Bins features get the saturated closed forms
  FitMode fit_mode = FitMode::CrossFit;
  double split_frac = 0.5;
  int folds = 2;
  NuisanceTarget target = NuisanceTarget::PseudoOutcome;
  double clip_eps = 0.05;
  std::shared_ptr<const MissingDesign> truth;  // required for OracleTruth

  void validate() const;
};

/// Fitted nuisances. The propensity is sigmoid(phi' theta) for logistic fits
/// and phi' theta directly for saturated (Bins) fits; it is clipped to
/// [clip_eps, 1] so that weights 1/pi stay in [1, 1/clip_eps].
struct NuisanceFit {
  ClassPtr propensity_cls;
  Eigen::VectorXd propensity_theta;
  bool saturated = false;
  std::optional<FunctionHandle> outcome;
  double clip_eps = 0.05;

  Eigen::VectorXd propensity(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd weights(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd outcome_values(const Eigen::MatrixXd& x) const;
  /// Number of points whose raw propensity falls below clip_eps.
  Eigen::Index clipped(const Eigen::MatrixXd& x) const;
};

/// Fits the nuisances on `rows`: logistic propensity on (x, obs), and for
/// PseudoOutcome targets least squares of y on x over the observed rows.
NuisanceFit fit_nuisance(const Dataset& rows, const NuisanceConfig& cfg);

NuisanceFit oracle_nuisance(const MissingDesign& design, double clip_eps = 0.05);

/// mu(x) + A / pi(x) (y - mu(x)).
Eigen::VectorXd pseudo_outcomes(const NuisanceFit& fit, const Dataset& data);

LossSpec make_pseudo_outcome_loss(const Dataset& data, const NuisanceFit& fit);

/// Pointwise pieces of a plug-in loss: loss = m1 m2 + r1 + r2.
struct ProductTerms {
  Eigen::VectorXd m1, m2, r1, r2;
};

ProductTerms product_terms(const LossSpec& plug_in, const Eigen::VectorXd& f);

// Nuisance-dependent ERM -----------------------------------------------------

/// Deterministic balanced fold labels in {0, .., K - 1}.
std::vector<int> assign_folds(Eigen::Index n, int K, std::uint64_t seed);

/// Rows of `data` with (keep == true) or (keep == false) fold membership.
Dataset subset(const Dataset& data, const std::vector<int>& fold_id, int fold, bool in_fold);

struct NuisanceErmResult {
  FitResult fit;
  std::vector<NuisanceFit> nuisances;  // one per fold for CrossFit
  std::vector<int> fold_id;
  Eigen::VectorXd pseudo;               // per row of the ERM sample
  double propensity_error = 0.0;        // ||pi-hat - pi0|| (oracle), first nuisance
  double outcome_error = 0.0;           // ||mu-hat - f*||
};

/// Nuisance fit for each fold k on the rows outside fold k.
std::vector<NuisanceFit> crossfit_nuisances(const Dataset& data, const std::vector<int>& fold_id, int K,
                                            const NuisanceConfig& cfg);

/// Minimizer of (1/K) sum_k |I_k|^-1 sum_{i in I_k} loss_{g^(-k)}(Z_i, f).
NuisanceErmResult crossfit_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls,
                               std::uint64_t seed);

/// Nuisances fit on the first split_frac share of a random permutation, ERM
/// on the rest.
NuisanceErmResult sample_split_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls,
                                   std::uint64_t seed);

/// Nuisances fit on all rows, ERM on the same rows.
NuisanceErmResult insample_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls);

/// Dispatch on cfg.fit_mode; OracleTruth uses the true nuisances.
NuisanceErmResult nuisance_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls,
                               std::uint64_t seed);

/// Quadrature L2 errors of the propensity and outcome fits against the truth.
std::pair<double, double> nuisance_errors(const NuisanceFit& fit, const MissingDesign& design);

// Weighted ERM and regret transfer -------------------------------------------

/// w(x) = 1 / pi(x); the loss is A (Y - f(X))^2 so R(f; w0) is the full-data risk.
struct WeightEstimate {
  Eigen::VectorXd weights;
  double chi2 = 0.0;  // E[(1 - w-hat / w0)^2] under the marginal
  double clipped_fraction = 0.0;
  bool clip_saturation = false;  // more than 1% of points clipped
  NuisanceFit fit;
};

/// Fits the propensity model on aux data and evaluates weights at `x_eval`.
WeightEstimate estimate_weights(const Dataset& aux, const ClassPtr& model, const Eigen::MatrixXd& x_eval,
                                const MissingDesign& design, double clip_eps = 0.05);

/// E[(1 - w(X) / w0(X))^2] by quadrature, w = 1 / clipped pi-hat.
double weight_chi2(const NuisanceFit& fit, const MissingDesign& design);

/// reg_estimated + 4 c^2 chi2. Throws WeightErrorTooLarge when chi2 >= 1/4.
double regret_transfer_rhs(double reg_estimated, double chi2, double c);

/// Regret of f under weights w: R(f; w) - inf_F R(.; w) with
/// R(f; w) = E[w(X) pi0(X) {sigma^2 + (f* - f)^2}]; F must be a d = 1 LinearSpan.
double weighted_regret(const MissingDesign& design, const FunctionHandle& fh,
                       const std::function<double(double)>& w);

/// Largest Var{w0(X) A (loss(f) - loss(f0))} / Reg(f; w0) over probes
/// f = f0 + t (h - f0), h sampled from the class, t in {0.01, 0.1, 1}.
double weighted_bernstein(const MissingDesign& design, int probe_count, std::uint64_t seed, int mc_draws = 100000);

struct TransferReport {
  std::string scenario;
  std::uint64_t seed = 0;
  Eigen::Index n = 0;
  double reg_true = 0.0;
  double reg_estimated = 0.0;
  double chi2 = 0.0;
  double c_hat = 0.0;
  double bound_rhs = 0.0;
  bool holds = false;
  bool checked = true;  // false when chi2 >= 1/4 (bound reported unchecked)
};

std::string transfer_csv_header();
std::string transfer_csv_row(const TransferReport& r);

}  // namespace ermlab
