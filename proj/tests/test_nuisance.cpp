#include <doctest.h>

#include <cmath>
#include <random>

#include "ermlab/harness.hpp"
#include "ermlab/nuisance.hpp"
#include "test_util.hpp"

using namespace ermlab;
using namespace ermlab::testing;

namespace {

Eigen::MatrixXd grid(int m) {
  Eigen::MatrixXd x(m, 1);
  for (int i = 0; i < m; ++i) x(i, 0) = (i + 0.5) / m;
  return x;
}

double max_gap(const FunctionHandle& a, const FunctionHandle& b) {
  const Eigen::MatrixXd x = grid(257);
  return (eval(a, x, SupCheck::Ignore) - eval(b, x, SupCheck::Ignore)).cwiseAbs().maxCoeff();
}

bool same_fit(const NuisanceFit& a, const NuisanceFit& b) {
  if (a.propensity_theta.size() != b.propensity_theta.size()) return false;
  if (a.propensity_theta != b.propensity_theta) return false;
  if (a.outcome.has_value() != b.outcome.has_value()) return false;
  if (!a.outcome) return true;
  return std::get<LinearRep>(a.outcome->rep()).theta == std::get<LinearRep>(b.outcome->rep()).theta;
}

// Constant propensity sigmoid(c) through the intercept of the cosine features.
MissingDesign constant_design(double c) {
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(3);
  eta[0] = c;
  return make_missing_design(transfer_design().sc, cosine_features(3), eta);
}

double sigmoid_inv(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("missing-data draws") {
  const auto design = insample_design();
  const Dataset d = draw_missing(design, 20000, 3);
  REQUIRE(d.obs);
  double seen = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    CHECK(((*d.obs)[i] == 0.0 || (*d.obs)[i] == 1.0));
    if ((*d.obs)[i] == 0.0) CHECK(d.y[i] == 0.0);
    seen += (*d.obs)[i];
  }
  // E[pi0(X)] by quadrature
  const Eigen::VectorXd pg = design.propensity(grid(100000));
  CHECK(std::abs(seen / 20000.0 - pg.mean()) < 4.0 * std::sqrt(0.25 / 20000.0));
  CHECK(pg.minCoeff() > 0.3);
  CHECK(pg.maxCoeff() < 0.9);
  CHECK_THROWS_AS(make_missing_design(design.sc, cosine_features(3), Eigen::VectorXd::Zero(2)), Error);
}

TEST_CASE("fit modes round-trip and configs validate") {
  for (auto m : {FitMode::SampleSplit, FitMode::CrossFit, FitMode::InSample, FitMode::OracleTruth})
    CHECK(fit_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(fit_mode_from_string("bogus"), Error);
  NuisanceConfig cfg;
  cfg.estimator_class = cosine_features(3);
  cfg.folds = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.folds = 2;
  cfg.validate();
  cfg.fit_mode = FitMode::SampleSplit;
  cfg.split_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.fit_mode = FitMode::OracleTruth;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("pseudo-outcome loss structure") {
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  const int m = 10000;
  Dataset d;
  d.x = grid(m);
  d.y.resize(m);
  Eigen::VectorXd f(m), pseudo(m), f2(m);
  for (int i = 0; i < m; ++i) {
    d.y[i] = g(rng);
    f[i] = g(rng);
    f2[i] = g(rng);
    pseudo[i] = 3.0 * g(rng);
  }
  // g = y reduces to the plain squared loss
  const Eigen::VectorXd plain = pointwise_loss(LossSpec::squared(), f, d);
  const Eigen::VectorXd same = pointwise_loss(LossSpec::plug_in(d.y), f, d);
  CHECK((plain - same).cwiseAbs().maxCoeff() <= 1e-12);

  const LossSpec loss = LossSpec::plug_in(pseudo);
  const Eigen::VectorXd l = pointwise_loss(loss, f, d);
  const ProductTerms t = product_terms(loss, f);
  const ProductTerms t2 = product_terms(loss, f2);
  double worst = 0.0, lip = 0.0;
  for (int i = 0; i < m; ++i) {
    const double direct = (pseudo[i] - f[i]) * (pseudo[i] - f[i]);
    worst = std::max(worst, std::abs(t.m1[i] * t.m2[i] + t.r1[i] + t.r2[i] - direct) / std::max(1.0, direct));
    CHECK(std::abs(l[i] - direct) <= 1e-12 * std::max(1.0, direct));
    lip = std::max(lip, std::abs(t.m1[i] - t2.m1[i]) / std::abs(f[i] - f2[i]));
  }
  CHECK(worst <= 1e-12);
  CHECK(lip <= 1.0 + 1e-12);
  CHECK_THROWS_AS(product_terms(LossSpec::squared(), f), Error);
  CHECK_THROWS_AS(product_terms(loss, f.head(3)), Error);

  Dataset no_obs = d;
  CHECK_THROWS_AS(pseudo_outcomes(oracle_nuisance(insample_design()), no_obs), Error);
  NuisanceFit bare = oracle_nuisance(insample_design());
  bare.outcome.reset();
  no_obs.obs = Eigen::VectorXd::Ones(m);
  CHECK_THROWS_AS(make_pseudo_outcome_loss(no_obs, bare), Error);
}

TEST_CASE("DR pseudo-outcome has conditional mean f*") {
  const auto design = insample_design();
  const double x0 = 0.3;
  Eigen::MatrixXd one(1, 1);
  one(0, 0) = x0;
  const double pi0 = design.propensity(one)[0];
  const double fstar = eval(design.sc.regression(), one, SupCheck::Ignore)[0];
  const int m = 1000000;
  Rng rng(5);
  std::bernoulli_distribution coin(pi0);
  Dataset d;
  d.x = Eigen::MatrixXd::Constant(m, 1, x0);
  d.y.resize(m);
  d.obs = Eigen::VectorXd(m);
  for (int i = 0; i < m; ++i) {
    const bool a = coin(rng);
    const double y = fstar + design.sc.noise.draw(rng);
    (*d.obs)[i] = a ? 1.0 : 0.0;
    d.y[i] = a ? y : 0.0;
  }
  NuisanceFit truth = oracle_nuisance(design);
  // a wrong outcome model with the true propensity keeps the mean (double robustness)
  NuisanceFit wrong_mu = truth;
  wrong_mu.outcome = zero_function(design.sc.cls);
  for (const auto* fit : {&truth, &wrong_mu}) {
    const Eigen::VectorXd g = pseudo_outcomes(*fit, d);
    const double mean = g.mean();
    const double se = std::sqrt((g.array() - mean).square().sum() / (m - 1.0) / m);
    CHECK(std::abs(mean - fstar) <= 4.0 * se);
  }
}

TEST_CASE("nuisance fitters") {
  const auto design = insample_design();
  const Dataset d = draw_missing(design, 4000, 8);
  NuisanceConfig cfg;
  cfg.estimator_class = cosine_features(3);
  cfg.fit_mode = FitMode::InSample;
  const NuisanceFit fit = fit_nuisance(d, cfg);
  // correctly specified logistic model recovers eta
  CHECK((fit.propensity_theta - design.eta).norm() < 0.3);
  const auto [pe, oe] = nuisance_errors(fit, design);
  CHECK(pe < 0.05);
  CHECK(oe < 0.2);
  const auto [pe0, oe0] = nuisance_errors(oracle_nuisance(design), design);
  CHECK(pe0 == 0.0);
  CHECK(oe0 == 0.0);

  // saturated bins: frequencies and observed means per bin
  cfg.estimator_class = bin_features(8);
  const NuisanceFit sat = fit_nuisance(d, cfg);
  CHECK(sat.saturated);
  std::vector<double> cnt(8), seen(8), sum(8);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const auto b = static_cast<std::size_t>(bin_index(d.x(i, 0), 8));
    cnt[b] += 1;
    if ((*d.obs)[i] > 0.5) {
      seen[b] += 1;
      sum[b] += d.y[i];
    }
  }
  Eigen::MatrixXd mids(8, 1);
  for (int b = 0; b < 8; ++b) mids(b, 0) = (b + 0.5) / 8;
  const Eigen::VectorXd p = sat.propensity(mids), mu = sat.outcome_values(mids);
  for (int b = 0; b < 8; ++b) {
    CHECK(p[b] == doctest::Approx(std::max(0.05, seen[b] / cnt[b])).epsilon(1e-14));
    CHECK(mu[b] == doctest::Approx(sum[b] / seen[b]).epsilon(1e-12));
  }

  // empty bins fall back to the pooled rate and a zero outcome
  Dataset tiny;
  tiny.x = column({0.05, 0.1, 0.12});
  tiny.y = vec({1.0, 0.0, 3.0});
  tiny.obs = vec({1.0, 0.0, 1.0});
  cfg.estimator_class = bin_features(4);
  const NuisanceFit tf = fit_nuisance(tiny, cfg);
  CHECK(tf.propensity_theta[0] == doctest::Approx(2.0 / 3.0));
  CHECK(tf.propensity_theta[3] == doctest::Approx(2.0 / 3.0));
  CHECK(tf.outcome_values(column({0.9}))[0] == 0.0);
  CHECK(tf.outcome_values(column({0.01}))[0] == doctest::Approx(2.0));
}

TEST_CASE("cross-fitting never lets fold k see its own rows") {
  const auto design = insample_design();
  const Dataset d = draw_missing(design, 600, 21);
  for (int K : {2, 3, 5}) {
    const auto folds = assign_folds(d.n(), K, 9);
    std::vector<int> sizes(static_cast<std::size_t>(K));
    for (int f : folds) sizes[static_cast<std::size_t>(f)]++;
    CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
    CHECK(assign_folds(d.n(), K, 9) == folds);
    for (const char* name : {"donsker", "rich"}) {
      NuisanceConfig cfg = insample_config(name, d.n(), design);
      cfg.fit_mode = FitMode::CrossFit;
      cfg.folds = K;
      const auto base = crossfit_nuisances(d, folds, K, cfg);
      for (int k = 0; k < K; ++k) {
        Dataset bent = d;
        Rng rng(static_cast<std::uint64_t>(100 + k));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (Eigen::Index i = 0; i < d.n(); ++i) {
          if (folds[static_cast<std::size_t>(i)] != k) continue;
          bent.x(i, 0) = u(rng);
          bent.y[i] = 10.0 * u(rng);
          (*bent.obs)[i] = u(rng) < 0.5 ? 1.0 : 0.0;
        }
        const auto moved = crossfit_nuisances(bent, folds, K, cfg);
        CHECK(same_fit(moved[static_cast<std::size_t>(k)], base[static_cast<std::size_t>(k)]));
        for (int j = 0; j < K; ++j)
          if (j != k) CHECK_FALSE(same_fit(moved[static_cast<std::size_t>(j)], base[static_cast<std::size_t>(j)]));
      }
    }
  }
}

TEST_CASE("cross-fit ERM: oracle equivalence, relabeling, errors") {
  const auto design = insample_design();
  const Dataset d = draw_missing(design, 500, 4);
  const ClassPtr& cls = design.sc.cls;

  // OracleTruth through the cross-fit path uses the true nuisances on every fold
  NuisanceConfig oracle = insample_config("oracle", d.n(), design);
  oracle.folds = 4;
  const auto cf = crossfit_erm(d, oracle, cls, 3);
  Dataset plain;
  plain.x = d.x;
  plain.y = pseudo_outcomes(oracle_nuisance(design), d);
  CHECK(max_gap(cf.fit.fh, fit_erm(plain, cls).fh) <= 1e-12);
  const auto ins = insample_erm(d, insample_config("oracle", d.n(), design), cls);
  CHECK(max_gap(ins.fit.fh, fit_erm(plain, cls).fh) == 0.0);

  NuisanceConfig cfg = insample_config("donsker", d.n(), design);
  cfg.fit_mode = FitMode::CrossFit;
  cfg.folds = 2;
  Dataset labeled = d;
  labeled.fold_id = assign_folds(d.n(), 2, 17);
  Dataset swapped = labeled;
  for (auto& f : *swapped.fold_id) f = 1 - f;
  const auto a = crossfit_erm(labeled, cfg, cls, 0);
  const auto b = crossfit_erm(swapped, cfg, cls, 0);
  CHECK(max_gap(a.fit.fh, b.fit.fh) <= 1e-12);
  CHECK(a.pseudo == b.pseudo);

  // unbalanced folds get weights n / (K |I_k|)
  Dataset lop = d;
  lop.fold_id = std::vector<int>(static_cast<std::size_t>(d.n()), 0);
  for (Eigen::Index i = 0; i < 100; ++i) (*lop.fold_id)[static_cast<std::size_t>(i)] = 1;
  CHECK_NOTHROW(crossfit_erm(lop, cfg, cls, 0));

  Dataset small = draw_missing(design, 3, 1);
  CHECK_THROWS_AS(crossfit_erm(small, cfg, cls, 0), Error);
  Dataset lonely = d;
  lonely.fold_id = std::vector<int>(static_cast<std::size_t>(d.n()), 0);
  (*lonely.fold_id)[0] = 1;
  try {
    crossfit_erm(lonely, cfg, cls, 0);
    FAIL("expected FoldTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FoldTooSmall);
  }

  cfg.fit_mode = FitMode::SampleSplit;
  const auto ss = nuisance_erm(d, cfg, cls, 5);
  CHECK(ss.pseudo.size() == 250);
  CHECK(ss.nuisances.size() == 1);
}

TEST_CASE("weight error and the transfer right-hand side") {
  CHECK(regret_transfer_rhs(0.3, 0.0, 5.0) == 0.3);
  CHECK(regret_transfer_rhs(0.0, 0.01, 1.0) == doctest::Approx(0.04).epsilon(1e-15));
  try {
    regret_transfer_rhs(0.0, 0.25, 1.0);
    FAIL("expected WeightErrorTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WeightErrorTooLarge);
  }

  const MissingDesign flat = constant_design(0.4);
  const double pi0 = 1.0 / (1.0 + std::exp(-0.4));
  CHECK(weight_chi2(oracle_nuisance(flat), flat) <= 1e-28);
  for (double t : {0.05, 0.2, -0.1}) {
    // w-hat = (1 + t) w0 means pi-hat = pi0 / (1 + t)
    NuisanceFit fit = oracle_nuisance(flat);
    fit.propensity_theta[0] = sigmoid_inv(pi0 / (1.0 + t));
    CHECK(weight_chi2(fit, flat) == doctest::Approx(t * t).epsilon(1e-10));
  }

  const MissingDesign design = transfer_design();
  std::vector<double> mean_chi2;
  for (Eigen::Index n_aux : {100, 1000, 10000}) {
    double acc = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Dataset aux = draw_missing(design, n_aux, derive_seed(77, s, static_cast<std::uint64_t>(n_aux)));
      acc += estimate_weights(aux, cosine_features(3), grid(10), design).chi2;
    }
    mean_chi2.push_back(acc / 20.0);
  }
  CHECK(mean_chi2[0] > mean_chi2[1]);
  CHECK(mean_chi2[1] > mean_chi2[2]);

  const Dataset aux = draw_missing(design, 2000, 1);
  const auto est = estimate_weights(aux, cosine_features(3), grid(50), design);
  CHECK(est.weights.size() == 50);
  CHECK(est.weights.minCoeff() >= 1.0);
  CHECK(est.weights.maxCoeff() <= 20.0);
  CHECK_FALSE(est.clip_saturation);
}

TEST_CASE("weighted regret and Bernstein constant") {
  const MissingDesign design = transfer_design();
  Eigen::MatrixXd one(1, 1);
  auto w0 = [&](double x) {
    one(0, 0) = x;
    return 1.0 / design.propensity(one)[0];
  };
  // under the true weights the weighted regret is the ordinary regret
  const FunctionHandle h = sample_member(design.sc.cls, 3);
  CHECK(weighted_regret(design, h, w0) == doctest::Approx(regret(design.sc, h)).epsilon(1e-8));
  CHECK(weighted_regret(design, design.sc.f0, w0) <= 1e-12);
  const double c = weighted_bernstein(design, 4, 2, 20000);
  CHECK(c > 0.0);
  CHECK(std::isfinite(c));

  TransferReport r;
  r.scenario = "t";
  r.seed = 4;
  r.n = 10;
  r.checked = false;
  CHECK(transfer_csv_header() == "scenario,seed,n,reg_true,reg_est,chi2,c_hat,bound_rhs,holds");
  CHECK(transfer_csv_row(r) == "t,4,10,0,0,0,0,0,unchecked");
}
