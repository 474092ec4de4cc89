#include "ermlab/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ermlab/common.hpp"

namespace ermlab {

namespace {

double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

void require_linear_1d(const ClassDescriptor& cls, const char* what) {
  if (cls.kind != ClassKind::LinearSpan || cls.dim_d != 1)
    fail(ErrorCode::UnsupportedClassKind, std::string(what) + " needs a d = 1 LinearSpan");
}

// Composite Gauss-Legendre nodes; for Bins features the panels line up with the bins.
void quadrature_for(const ClassDescriptor* bins_cls, Eigen::MatrixXd& x, Eigen::VectorXd& w) {
  int panels = 512;
  if (bins_cls && bins_cls->basis == FeatureBasis::Bins) {
    const int p = bins_cls->p();
    panels = p * std::max(1, (512 + p - 1) / p);
  }
  std::vector<double> nodes, weights;
  gauss_legendre_unit(panels, nodes, weights);
  x.resize(static_cast<Eigen::Index>(nodes.size()), 1);
  w.resize(static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    x(static_cast<Eigen::Index>(i), 0) = nodes[i];
    w[static_cast<Eigen::Index>(i)] = weights[i];
  }
}

Dataset observed_rows(const Dataset& d) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if ((*d.obs)[i] > 0.5) keep.push_back(i);
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(keep.size()), d.x.cols());
  out.y.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.x.row(static_cast<Eigen::Index>(k)) = d.x.row(keep[k]);
    out.y[static_cast<Eigen::Index>(k)] = d.y[keep[k]];
  }
  return out;
}

std::vector<Eigen::Index> permutation(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(derive_seed(seed, seed_tag::kNuisance, 0));
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

Dataset take_rows(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.x.resize(m, d.x.cols());
  out.y.resize(m);
  if (d.obs) out.obs = Eigen::VectorXd(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index i = rows[static_cast<std::size_t>(k)];
    out.x.row(k) = d.x.row(i);
    out.y[k] = d.y[i];
    if (d.obs) (*out.obs)[k] = (*d.obs)[i];
  }
  return out;
}

NuisanceErmResult finish(FitResult fit, std::vector<NuisanceFit> nuisances, std::vector<int> fold_id,
                         Eigen::VectorXd pseudo, const NuisanceConfig& cfg) {
  NuisanceErmResult res{std::move(fit), std::move(nuisances), std::move(fold_id), std::move(pseudo)};
  if (cfg.truth && !res.nuisances.empty()) {
    const auto [pe, oe] = nuisance_errors(res.nuisances.front(), *cfg.truth);
    res.propensity_error = pe;
    res.outcome_error = oe;
  }
  return res;
}

}  // namespace

Eigen::VectorXd MissingDesign::propensity(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd eta_x = feature_matrix(*propensity_features, x) * eta;
  return eta_x.unaryExpr([](double t) { return sigmoid(t); });
}

MissingDesign make_missing_design(Scenario sc, ClassPtr propensity_features, Eigen::VectorXd eta) {
  require_linear_1d(*propensity_features, "propensity model");
  if (sc.cls->dim_d != 1) fail(ErrorCode::DimensionMismatch, "missing-data design is one-dimensional");
  if (eta.size() != propensity_features->p()) fail(ErrorCode::ShapeMismatch, "eta length must equal p");
  return MissingDesign{std::move(sc), std::move(propensity_features), std::move(eta)};
}

Dataset draw_missing(const MissingDesign& design, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x = sample_points(design.sc.marginal, 1, static_cast<int>(n), rng);
  d.y = eval(design.sc.regression(), d.x, SupCheck::Ignore);
  const Eigen::VectorXd pi = design.propensity(d.x);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd obs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.y[i] += design.sc.noise.draw(rng);
    obs[i] = unif(rng) < pi[i] ? 1.0 : 0.0;
    if (obs[i] == 0.0) d.y[i] = 0.0;
  }
  d.obs = std::move(obs);
  return d;
}

std::string_view to_string(FitMode m) {
  switch (m) {
    case FitMode::SampleSplit: return "sample_split";
    case FitMode::CrossFit: return "crossfit";
    case FitMode::InSample: return "insample";
    case FitMode::OracleTruth: return "oracle";
  }
  return "?";
}

FitMode fit_mode_from_string(std::string_view s) {
  if (s == "sample_split") return FitMode::SampleSplit;
  if (s == "crossfit") return FitMode::CrossFit;
  if (s == "insample") return FitMode::InSample;
  if (s == "oracle") return FitMode::OracleTruth;
  fail(ErrorCode::InvalidArgument, "unknown fit mode: " + std::string(s));
}

void NuisanceConfig::validate() const {
  if (fit_mode == FitMode::OracleTruth) {
    if (!truth) fail(ErrorCode::MissingField, "oracle nuisances need the true design");
  } else {
    if (!estimator_class) fail(ErrorCode::MissingField, "nuisance estimator class");
    require_linear_1d(*estimator_class, "nuisance estimator");
  }
  if (fit_mode == FitMode::CrossFit && folds < 2) fail(ErrorCode::InvalidArgument, "cross-fitting needs K >= 2");
  if (fit_mode == FitMode::SampleSplit && !(split_frac > 0.0 && split_frac < 1.0))
    fail(ErrorCode::InvalidArgument, "split fraction must lie in (0, 1)");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail(ErrorCode::InvalidArgument, "clip_eps must lie in (0, 1)");
}

Eigen::VectorXd NuisanceFit::propensity(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd raw = eval(FunctionHandle(propensity_cls, LinearRep{propensity_theta}), x, SupCheck::Ignore);
  const double lo = clip_eps;
  return raw.unaryExpr([&](double t) { return std::clamp(saturated ? t : sigmoid(t), lo, 1.0); });
}

Eigen::VectorXd NuisanceFit::weights(const Eigen::MatrixXd& x) const { return propensity(x).cwiseInverse(); }

Eigen::VectorXd NuisanceFit::outcome_values(const Eigen::MatrixXd& x) const {
  if (!outcome) fail(ErrorCode::MissingNuisanceValue, "no outcome regression was fit");
  return eval(*outcome, x, SupCheck::Ignore);
}

Eigen::Index NuisanceFit::clipped(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd raw = eval(FunctionHandle(propensity_cls, LinearRep{propensity_theta}), x, SupCheck::Ignore);
  Eigen::Index c = 0;
  for (Eigen::Index i = 0; i < raw.size(); ++i)
    if ((saturated ? raw[i] : sigmoid(raw[i])) < clip_eps) ++c;
  return c;
}

NuisanceFit fit_nuisance(const Dataset& rows, const NuisanceConfig& cfg) {
  if (!cfg.estimator_class) fail(ErrorCode::MissingField, "nuisance estimator class");
  require_linear_1d(*cfg.estimator_class, "nuisance estimator");
  if (!rows.obs) fail(ErrorCode::MissingNuisanceValue, "observation indicators are required");
  rows.validate();
  const auto& cls = cfg.estimator_class;
  const Eigen::Index n = rows.n();
  if (n == 0) fail(ErrorCode::FoldTooSmall, "no rows to fit the nuisance on");
  NuisanceFit fit;
  fit.propensity_cls = cls;
  fit.clip_eps = cfg.clip_eps;
  const Eigen::VectorXd& obs = *rows.obs;

  if (cls->basis == FeatureBasis::Bins) {
    // Saturated models: the logistic MLE on bin indicators is the bin
    // frequency and least squares is the bin mean. Bins without rows take the
    // pooled frequency; bins without observed responses get 0 (minimum norm).
    const int p = cls->p();
    Eigen::VectorXd count = Eigen::VectorXd::Zero(p), seen = Eigen::VectorXd::Zero(p), sum = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int b = bin_index(rows.x(i, 0), p);
      count[b] += 1.0;
      if (obs[i] > 0.5) {
        seen[b] += 1.0;
        sum[b] += rows.y[i];
      }
    }
    const double pooled = seen.sum() / static_cast<double>(n);
    fit.saturated = true;
    fit.propensity_theta.resize(p);
    Eigen::VectorXd means(p);
    for (int b = 0; b < p; ++b) {
      fit.propensity_theta[b] = count[b] > 0 ? seen[b] / count[b] : pooled;
      means[b] = seen[b] > 0 ? sum[b] / seen[b] : 0.0;
    }
    if (cfg.target == NuisanceTarget::PseudoOutcome) {
      if (seen.sum() == 0.0) fail(ErrorCode::MissingNuisanceValue, "no observed responses");
      fit.outcome = FunctionHandle(cls, LinearRep{means});
    }
    return fit;
  }

  Dataset logit;
  logit.x = rows.x;
  logit.y = obs.unaryExpr([](double a) { return a > 0.5 ? 1.0 : -1.0; });
  fit.propensity_theta = std::get<LinearRep>(fit_tikhonov(logit, cls, LossSpec::logistic(), 0.0).fh.rep()).theta;
  if (cfg.target == NuisanceTarget::PseudoOutcome) {
    const Dataset seen = observed_rows(rows);
    if (seen.n() == 0) fail(ErrorCode::MissingNuisanceValue, "no observed responses");
    fit.outcome = fit_least_squares(seen, cls).fh;
  }
  return fit;
}

NuisanceFit oracle_nuisance(const MissingDesign& design, double clip_eps) {
  NuisanceFit fit;
  fit.propensity_cls = design.propensity_features;
  fit.propensity_theta = design.eta;
  fit.outcome = design.sc.regression();
  fit.clip_eps = clip_eps;
  return fit;
}

Eigen::VectorXd pseudo_outcomes(const NuisanceFit& fit, const Dataset& data) {
  if (!data.obs) fail(ErrorCode::MissingNuisanceValue, "observation indicators are required");
  const Eigen::VectorXd mu = fit.outcome_values(data.x);
  const Eigen::VectorXd pi = fit.propensity(data.x);
  Eigen::VectorXd g(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) g[i] = mu[i] + (*data.obs)[i] / pi[i] * (data.y[i] - mu[i]);
  return g;
}

LossSpec make_pseudo_outcome_loss(const Dataset& data, const NuisanceFit& fit) {
  return LossSpec::plug_in(pseudo_outcomes(fit, data));
}

ProductTerms product_terms(const LossSpec& plug_in, const Eigen::VectorXd& f) {
  if (plug_in.kind != LossSpec::Kind::PlugInProduct) fail(ErrorCode::InvalidArgument, "plug-in loss expected");
  if (f.size() != plug_in.pseudo.size()) fail(ErrorCode::ShapeMismatch, "prediction length");
  return {f, -2.0 * plug_in.pseudo, f.cwiseAbs2(), plug_in.pseudo.cwiseAbs2()};
}

std::vector<int> assign_folds(Eigen::Index n, int K, std::uint64_t seed) {
  if (K < 2) fail(ErrorCode::InvalidArgument, "K >= 2 required");
  const auto perm = permutation(n, seed);
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])] = static_cast<int>(r % K);
  return fold;
}

Dataset subset(const Dataset& data, const std::vector<int>& fold_id, int fold, bool in_fold) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    if ((fold_id[static_cast<std::size_t>(i)] == fold) == in_fold) rows.push_back(i);
  return take_rows(data, rows);
}

std::vector<NuisanceFit> crossfit_nuisances(const Dataset& data, const std::vector<int>& fold_id, int K,
                                            const NuisanceConfig& cfg) {
  std::vector<NuisanceFit> fits;
  fits.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) fits.push_back(fit_nuisance(subset(data, fold_id, k, false), cfg));
  return fits;
}

NuisanceErmResult crossfit_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls,
                               std::uint64_t seed) {
  cfg.validate();
  data.validate();
  const int K = cfg.folds;
  if (K < 2) fail(ErrorCode::InvalidArgument, "cross-fitting needs K >= 2");
  if (data.n() < 2 * K) fail(ErrorCode::FoldTooSmall, "n must be at least 2K");
  std::vector<int> fold_id = data.fold_id ? *data.fold_id : assign_folds(data.n(), K, seed);
  if (static_cast<Eigen::Index>(fold_id.size()) != data.n()) fail(ErrorCode::ShapeMismatch, "fold_id length");
  std::vector<double> size(static_cast<std::size_t>(K), 0.0);
  for (int f : fold_id) {
    if (f < 0 || f >= K) fail(ErrorCode::InvalidArgument, "fold label out of range");
    size[static_cast<std::size_t>(f)] += 1.0;
  }
  for (double s : size)
    if (s < 2.0) fail(ErrorCode::FoldTooSmall, "every fold needs at least two rows");

  std::vector<NuisanceFit> nuisances;
  if (cfg.fit_mode == FitMode::OracleTruth)
    nuisances.assign(static_cast<std::size_t>(K), oracle_nuisance(*cfg.truth, cfg.clip_eps));
  else
    nuisances = crossfit_nuisances(data, fold_id, K, cfg);

  Eigen::VectorXd pseudo(data.n());
  Eigen::VectorXd w(data.n());
  const double n = static_cast<double>(data.n());
  for (int k = 0; k < K; ++k) {
    const Dataset fold = subset(data, fold_id, k, true);
    const Eigen::VectorXd g = pseudo_outcomes(nuisances[static_cast<std::size_t>(k)], fold);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      if (fold_id[static_cast<std::size_t>(i)] != k) continue;
      pseudo[i] = g[j++];
      w[i] = n / (K * size[static_cast<std::size_t>(k)]);
    }
  }
  Dataset erm;
  erm.x = data.x;
  erm.y = pseudo;
  const bool balanced = (w.array() == 1.0).all();
  FitResult fit = balanced ? fit_erm(erm, cls) : fit_weighted_erm(erm, w, cls);
  return finish(std::move(fit), std::move(nuisances), std::move(fold_id), std::move(pseudo), cfg);
}

NuisanceErmResult sample_split_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls,
                                   std::uint64_t seed) {
  cfg.validate();
  data.validate();
  const auto perm = permutation(data.n(), seed);
  const auto cut = static_cast<std::size_t>(std::floor(cfg.split_frac * static_cast<double>(data.n())));
  if (cut < 1 || cut >= perm.size()) fail(ErrorCode::FoldTooSmall, "both halves of the split must be nonempty");
  std::vector<Eigen::Index> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<Eigen::Index> second(perm.begin() + static_cast<std::ptrdiff_t>(cut), perm.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  const Dataset train = take_rows(data, first), erm_rows = take_rows(data, second);
  std::vector<NuisanceFit> nuisances{fit_nuisance(train, cfg)};
  Dataset erm;
  erm.x = erm_rows.x;
  erm.y = pseudo_outcomes(nuisances.front(), erm_rows);
  FitResult fit = fit_erm(erm, cls);
  return finish(std::move(fit), std::move(nuisances), {}, std::move(erm.y), cfg);
}

NuisanceErmResult insample_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls) {
  cfg.validate();
  data.validate();
  std::vector<NuisanceFit> nuisances{cfg.fit_mode == FitMode::OracleTruth ? oracle_nuisance(*cfg.truth, cfg.clip_eps)
                                                                          : fit_nuisance(data, cfg)};
  Dataset erm;
  erm.x = data.x;
  erm.y = pseudo_outcomes(nuisances.front(), data);
  FitResult fit = fit_erm(erm, cls);
  return finish(std::move(fit), std::move(nuisances), {}, std::move(erm.y), cfg);
}

NuisanceErmResult nuisance_erm(const Dataset& data, const NuisanceConfig& cfg, const ClassPtr& cls,
                               std::uint64_t seed) {
  switch (cfg.fit_mode) {
    case FitMode::CrossFit: return crossfit_erm(data, cfg, cls, seed);
    case FitMode::SampleSplit: return sample_split_erm(data, cfg, cls, seed);
    case FitMode::InSample:
    case FitMode::OracleTruth: return insample_erm(data, cfg, cls);
  }
  fail(ErrorCode::InvalidArgument, "unknown fit mode");
}

std::pair<double, double> nuisance_errors(const NuisanceFit& fit, const MissingDesign& design) {
  Eigen::MatrixXd x;
  Eigen::VectorXd w;
  quadrature_for(fit.propensity_cls.get(), x, w);
  const Eigen::VectorXd dp = fit.propensity(x) - design.propensity(x);
  const double pe = std::sqrt(w.dot(dp.cwiseAbs2()));
  double oe = 0.0;
  if (fit.outcome) {
    const Eigen::VectorXd dm = fit.outcome_values(x) - eval(design.sc.regression(), x, SupCheck::Ignore);
    oe = std::sqrt(w.dot(dm.cwiseAbs2()));
  }
  return {pe, oe};
}

double weight_chi2(const NuisanceFit& fit, const MissingDesign& design) {
  Eigen::MatrixXd x;
  Eigen::VectorXd w;
  quadrature_for(fit.propensity_cls.get(), x, w);
  // w-hat / w0 = pi0 / pi-hat
  const Eigen::VectorXd r = design.propensity(x).cwiseQuotient(fit.propensity(x));
  return w.dot((Eigen::VectorXd::Ones(r.size()) - r).cwiseAbs2());
}

WeightEstimate estimate_weights(const Dataset& aux, const ClassPtr& model, const Eigen::MatrixXd& x_eval,
                                const MissingDesign& design, double clip_eps) {
  NuisanceConfig cfg;
  cfg.estimator_class = model;
  cfg.target = NuisanceTarget::Weight;
  cfg.clip_eps = clip_eps;
  WeightEstimate est;
  est.fit = fit_nuisance(aux, cfg);
  est.weights = est.fit.weights(x_eval);
  est.clipped_fraction =
      x_eval.rows() > 0 ? static_cast<double>(est.fit.clipped(x_eval)) / static_cast<double>(x_eval.rows()) : 0.0;
  est.clip_saturation = est.clipped_fraction > 0.01;
  est.chi2 = weight_chi2(est.fit, design);
  return est;
}

double regret_transfer_rhs(double reg_estimated, double chi2, double c) {
  if (chi2 < 0.0) fail(ErrorCode::InvalidArgument, "chi2 must be nonnegative");
  if (chi2 >= 0.25) fail(ErrorCode::WeightErrorTooLarge, "weight error ||1 - w/w0||^2 must be below 1/4");
  return reg_estimated + 4.0 * c * c * chi2;
}

double weighted_regret(const MissingDesign& design, const FunctionHandle& fh,
                       const std::function<double(double)>& w) {
  require_linear_1d(fh.cls(), "weighted regret");
  Eigen::MatrixXd x;
  Eigen::VectorXd q;
  quadrature_for(nullptr, x, q);
  const Eigen::VectorXd pi0 = design.propensity(x);
  auto u = [&](double t) {
    Eigen::MatrixXd one(1, 1);
    one(0, 0) = t;
    return w(t) * design.propensity(one)[0];
  };
  const FunctionHandle best = l2_projection(fh.class_ptr(), design.sc.regression(), u);
  const Eigen::VectorXd fs = eval(design.sc.regression(), x, SupCheck::Ignore);
  const Eigen::VectorXd a = fs - eval(fh, x, SupCheck::Ignore);
  const Eigen::VectorXd b = fs - eval(best, x, SupCheck::Ignore);
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += q[i] * w(x(i, 0)) * pi0[i] * (a[i] * a[i] - b[i] * b[i]);
  return std::max(s, 0.0);
}

double weighted_bernstein(const MissingDesign& design, int probe_count, std::uint64_t seed, int mc_draws) {
  const Scenario& sc = design.sc;
  const Dataset z = draw_missing(design, mc_draws, derive_seed(seed, seed_tag::kOracleMc, 0));
  const Eigen::VectorXd w0 = design.propensity(z.x).cwiseInverse();
  const Eigen::VectorXd f0 = eval(sc.f0, z.x, SupCheck::Ignore);
  double best = 0.0;
  int used = 0;
  for (int k = 0; k < probe_count; ++k) {
    const FunctionHandle h = sample_member(sc.cls, derive_seed(seed, seed_tag::kProbe, static_cast<std::uint64_t>(k)));
    for (double t : {0.01, 0.1, 1.0}) {
      const FunctionHandle f = combine(1.0 - t, sc.f0, t, h);
      const double reg = regret(sc, f);
      if (reg < 1e-12) continue;
      const Eigen::VectorXd fv = eval(f, z.x, SupCheck::Ignore);
      Eigen::VectorXd diff(z.n());
      for (Eigen::Index i = 0; i < z.n(); ++i) {
        const double a = (*z.obs)[i];
        diff[i] = w0[i] * a * ((z.y[i] - fv[i]) * (z.y[i] - fv[i]) - (z.y[i] - f0[i]) * (z.y[i] - f0[i]));
      }
      const double mean = diff.mean();
      const double var = (diff.array() - mean).square().sum() / static_cast<double>(z.n() - 1);
      best = std::max(best, var / reg);
      ++used;
    }
  }
  if (used == 0) fail(ErrorCode::DegenerateProbe, "every probe coincides with f0");
  return best;
}

std::string transfer_csv_header() { return "scenario,seed,n,reg_true,reg_est,chi2,c_hat,bound_rhs,holds"; }

std::string transfer_csv_row(const TransferReport& r) {
  return r.scenario + "," + std::to_string(r.seed) + "," + std::to_string(r.n) + "," + format_double(r.reg_true) + "," +
         format_double(r.reg_estimated) + "," + format_double(r.chi2) + "," + format_double(r.c_hat) + "," +
         format_double(r.bound_rhs) + "," + (r.checked ? (r.holds ? "true" : "false") : "unchecked");
}

}  // namespace ermlab
