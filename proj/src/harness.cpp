#include "ermlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "ermlab/complexity.hpp"
#include "ermlab/envelope.hpp"

namespace ermlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

ClassDescriptor linear_desc(FeatureBasis basis, int d, int p, double B, double M) {
  ClassDescriptor c;
  c.kind = ClassKind::LinearSpan;
  c.dim_d = d;
  c.ambient_p = p;
  c.basis = basis;
  c.radius_B = B;
  c.sup_bound_M = M;
  return c;
}

ClassDescriptor monotone_desc(double M) {
  ClassDescriptor c;
  c.kind = ClassKind::Monotone;
  c.sup_bound_M = M;
  return c;
}

ClassDescriptor lipschitz_desc(double L, double M) {
  ClassDescriptor c;
  c.kind = ClassKind::LipschitzMesh;
  c.lipschitz_L = L;
  c.sup_bound_M = M;
  return c;
}

ClassDescriptor rkhs_desc(double beta, double R, double M) {
  ClassDescriptor c;
  c.kind = ClassKind::RkhsBall;
  c.rkhs_decay_beta = beta;
  c.rkhs_R = R;
  c.sup_bound_M = M;
  return c;
}

struct Moments {
  double d2 = 0.0, d4 = 0.0;
};

// E[d^2], E[d^4] for d = f - g under U[0, 1].
Moments diff_moments(const FunctionHandle& f, const FunctionHandle& g, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& w) {
  const Eigen::VectorXd d = eval(f, x, SupCheck::Ignore) - eval(g, x, SupCheck::Ignore);
  const Eigen::ArrayXd d2 = d.array().square();
  return {(w.array() * d2).sum(), (w.array() * d2.square()).sum()};
}

void unit_quadrature(Eigen::MatrixXd& x, Eigen::VectorXd& w) {
  std::vector<double> nodes, weights;
  gauss_legendre_unit(512, nodes, weights);
  x.resize(static_cast<Eigen::Index>(nodes.size()), 1);
  w.resize(static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    x(static_cast<Eigen::Index>(i), 0) = nodes[i];
    w[static_cast<Eigen::Index>(i)] = weights[i];
  }
}

template <class Rec, class Get>
void group_by_n(const std::vector<Rec>& records, Get get, std::vector<double>& ns, std::vector<double>& means,
                std::vector<double>& medians) {
  std::map<Eigen::Index, std::vector<double>> by_n;
  for (const auto& r : records) {
    const double v = get(r);
    if (std::isfinite(v)) by_n[r.n].push_back(v);
  }
  for (auto& [n, vals] : by_n) {
    ns.push_back(static_cast<double>(n));
    means.push_back(std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size()));
    medians.push_back(quantile(vals, 0.5));
  }
}

// 0.9 tanh(3 (x - 1/2)) / tanh(3/2) on 17 knots.
std::vector<double> tanh_mesh() {
  std::vector<double> v;
  for (int k = 0; k <= 16; ++k) v.push_back(0.9 * std::tanh(3.0 * (k / 16.0 - 0.5)) / std::tanh(1.5));
  return v;
}

}  // namespace

// Scenarios ------------------------------------------------------------------

Scenario build_scenario(const ScenarioSpec& spec) {
  ClassPtr cls = make_class(spec.cls);
  if (!spec.truth_mesh.empty()) {
    if (!spec.truth_cosine.empty()) fail(ErrorCode::InvalidArgument, "give truth_cosine or truth_mesh, not both");
    if (spec.truth_mesh.size() < 2) fail(ErrorCode::InvalidArgument, "truth_mesh needs at least 2 values");
    MeshRep mesh;
    const auto G = spec.truth_mesh.size();
    for (std::size_t k = 0; k < G; ++k) mesh.knots.push_back(static_cast<double>(k) / static_cast<double>(G - 1));
    mesh.values = spec.truth_mesh;
    Scenario sc = make_scenario(spec.id, cls, spec.sigma, spec.seed);
    sc.f0 = FunctionHandle(cls, std::move(mesh));
    return sc;
  }
  if (spec.truth_cosine.empty()) return make_scenario(spec.id, cls, spec.sigma, spec.seed);
  const int p = static_cast<int>(spec.truth_cosine.size());
  double bound = 0.0;
  for (double c : spec.truth_cosine) bound += std::abs(c) * std::sqrt(2.0);
  ClassPtr truth = make_class(linear_desc(FeatureBasis::Cosine, 1, p, 1.0, bound + 1.0));
  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(spec.truth_cosine.data(), p);
  return make_misspecified_scenario(spec.id, cls, FunctionHandle(truth, LinearRep{theta}), spec.sigma, spec.seed);
}

std::vector<ScenarioSpec> shipped_scenarios() {
  return {
      {"linear_p5", linear_desc(FeatureBasis::Identity, 5, 5, 1.0, 3.0), 0.5, 1, {}},
      {"hat_p9", linear_desc(FeatureBasis::Hat, 1, 9, 1.0, 2.0), 0.5, 2, {}},
      {"linear_misspec", linear_desc(FeatureBasis::Cosine, 1, 2, 1.0, 3.0), 0.5, 3, {0.1, 0.5, 0.4, 0.3, 0.2}},
      {"monotone", monotone_desc(1.0), 0.5, 4, {}, tanh_mesh()},
      {"lipschitz", lipschitz_desc(1.0, 1.0), 0.5, 5, {}},
      {"lipschitz_L4", lipschitz_desc(4.0, 1.0), 0.5, 6, {}},
      {"rkhs_b1", rkhs_desc(1.0, 0.5, 1.0), 0.5, 7, {}},
      {"rkhs_b2", rkhs_desc(2.0, 0.5, 1.0), 0.5, 8, {}},
  };
}

ScenarioSpec shipped_scenario(std::string_view id) {
  for (auto& s : shipped_scenarios())
    if (s.id == id) return s;
  fail(ErrorCode::InvalidArgument, "unknown scenario: " + std::string(id));
}

double predicted_regret_exponent(const ClassDescriptor& cls) {
  const double gamma = entropy_envelope(cls).exponent_gamma();
  return -1.0 / (2.0 - gamma);
}

// Sweeps ---------------------------------------------------------------------

std::vector<Eigen::Index> default_n_grid() { return {128, 256, 512, 1024, 2048, 4096, 8192}; }

double grid_decades(const std::vector<Eigen::Index>& n_grid) {
  if (n_grid.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(n_grid.begin(), n_grid.end());
  return std::log10(static_cast<double>(*hi) / static_cast<double>(*lo));
}

std::vector<RegretRecord> run_sweep(const SweepConfig& cfg) {
  if (cfg.n_grid.empty()) fail(ErrorCode::InvalidArgument, "empty n grid");
  if (cfg.seeds_per_n < 1) fail(ErrorCode::InvalidArgument, "seeds_per_n must be positive");
  if (cfg.n_grid.front() < 1) fail(ErrorCode::InvalidArgument, "sample sizes must be positive");
  if (!std::is_sorted(cfg.n_grid.begin(), cfg.n_grid.end())) fail(ErrorCode::InvalidArgument, "n grid must ascend");
  if (cfg.pipeline != "erm" && cfg.pipeline != "tikhonov")
    fail(ErrorCode::InvalidArgument, "unknown pipeline: " + cfg.pipeline);
  const Scenario sc = build_scenario(cfg.scenario);
  const std::size_t S = static_cast<std::size_t>(cfg.seeds_per_n);
  std::vector<RegretRecord> out(cfg.n_grid.size() * S);
  parallel_for(out.size(), cfg.jobs, [&](std::size_t task) {
    const Eigen::Index n = cfg.n_grid[task / S];
    const std::uint64_t seed = derive_seed(cfg.master_seed, seed_tag::kSweep, task % S);
    const Dataset data = draw_data(sc, n, derive_seed(seed, static_cast<std::uint64_t>(n), 0));
    try {
      const FitResult fit = cfg.pipeline == "erm" ? fit_erm(data, sc.cls)
                                                  : fit_tikhonov(data, sc.cls, LossSpec::squared(), cfg.lambda);
      RegretRecord r = make_record(sc, data, fit, seed);
      if (fit.meta.solver == "frank_wolfe" || fit.meta.solver == "kernel_ridge")
        r.flags += r.flags.empty() ? "approx_solver" : "|approx_solver";
      if (cfg.pipeline == "tikhonov") r.flags += r.flags.empty() ? "regularized" : "|regularized";
      out[task] = std::move(r);
    } catch (const Error& e) {
      RegretRecord r;
      r.n = n;
      r.seed = seed;
      r.scenario = sc.id;
      r.emp_risk = r.pop_risk = r.regret = r.l2_error = r.fluctuation = std::numeric_limits<double>::quiet_NaN();
      r.flags = "error";
      out[task] = std::move(r);
    }
  });
  return out;
}

std::string sweep_csv(const std::vector<RegretRecord>& records) {
  std::string s = record_csv_header() + "\n";
  for (const auto& r : records) s += record_csv_row(r) + "\n";
  return s;
}

bool exact_record(const RegretRecord& r) { return r.flags.empty(); }

RateFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorCode::ShapeMismatch, "x and y lengths differ");
  if (x.size() < 4) fail(ErrorCode::InsufficientGrid, "rate fits need at least 4 points");
  const std::size_t m = x.size();
  std::vector<double> lx(m), ly(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (!(x[k] > 0.0) || !(y[k] > 0.0)) fail(ErrorCode::InvalidArgument, "log-log fit needs positive values");
    lx[k] = std::log(x[k]);
    ly[k] = std::log(y[k]);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(m);
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(m);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
    syy += (ly[k] - my) * (ly[k] - my);
  }
  if (sxx == 0.0) fail(ErrorCode::InsufficientGrid, "x values must differ");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double e = ly[k] - fit.intercept - fit.slope * lx[k];
    sse += e * e;
  }
  fit.slope_stderr = std::sqrt(sse / static_cast<double>(m - 2) / sxx);
  fit.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  fit.n_points = static_cast<int>(m);
  fit.median_slope = fit.slope;
  return fit;
}

RateFit fit_rate(const std::vector<RegretRecord>& records, Response response) {
  std::vector<double> ns, means, medians;
  group_by_n(
      records, [&](const RegretRecord& r) { return response == Response::Regret ? r.regret : r.l2_error; }, ns,
      means, medians);
  if (ns.size() < 4) fail(ErrorCode::InsufficientGrid, "rate fits need at least 4 distinct n");
  RateFit fit = fit_loglog(ns, means);
  bool medians_positive = std::all_of(medians.begin(), medians.end(), [](double v) { return v > 0.0; });
  fit.median_slope = medians_positive ? fit_loglog(ns, medians).slope : std::numeric_limits<double>::quiet_NaN();
  return fit;
}

// PAC coverage ---------------------------------------------------------------

double pac_coverage(const std::vector<RegretRecord>& records, const BoundFamily& bound, double eta) {
  if (records.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& r : records)
    if (r.regret <= bound(r.n, eta)) ++hit;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

std::vector<double> coverage_curve(const std::vector<RegretRecord>& records, const BoundFamily& bound,
                                   const std::vector<double>& etas) {
  std::vector<double> out;
  out.reserve(etas.size());
  for (double e : etas) out.push_back(pac_coverage(records, bound, e));
  return out;
}

BoundFamily regret_bound_shape(const ClassDescriptor& cls) {
  const Envelope env = entropy_envelope(cls);
  return [env](Eigen::Index n, double eta) {
    const double dn = critical_radius_envelope(env, static_cast<double>(n)).value;
    return dn * dn + std::log(1.0 / eta) / static_cast<double>(n);
  };
}

double calibrate_constant(const std::vector<RegretRecord>& train, const BoundFamily& shape, double eta,
                          double q) {
  std::vector<double> ratios;
  for (const auto& r : train)
    if (std::isfinite(r.regret)) ratios.push_back(r.regret / shape(r.n, eta));
  if (ratios.empty()) fail(ErrorCode::NoRecordsFound, "no training records");
  return quantile(ratios, q);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) fail(ErrorCode::InvalidArgument, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Histogram union bound --------------------------------------------------------

int histogram_bins(const HistogramConfig& cfg, Eigen::Index n) {
  const int K = cfg.rule == HistogramConfig::Rule::Sqrt ? static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))))
                                                        : cfg.constant_k;
  if (K < 1 || 4 * static_cast<Eigen::Index>(K) > n) fail(ErrorCode::InvalidArgument, "need 1 <= K(n) <= n/4");
  return K;
}

std::vector<HistogramRecord> histogram_union_experiment(const HistogramConfig& cfg) {
  if (!(cfg.eta > 0.0 && cfg.eta < 1.0)) fail(ErrorCode::InvalidArgument, "eta must lie in (0, 1)");
  const TruncatedNoise noise{cfg.sigma};
  const double range = 1.0 + 2.0 * TruncatedNoise::kCut * cfg.sigma;
  const std::size_t S = static_cast<std::size_t>(cfg.seeds);
  std::vector<HistogramRecord> out(cfg.n_grid.size() * S);
  parallel_for(out.size(), cfg.jobs, [&](std::size_t task) {
    const Eigen::Index n = cfg.n_grid[task / S];
    const int K = histogram_bins(cfg, n);
    HistogramRecord rec;
    rec.n = n;
    rec.K = K;
    rec.seed = derive_seed(cfg.master_seed, seed_tag::kHistogram, task % S);
    std::vector<double> sum(static_cast<std::size_t>(K)), cnt(static_cast<std::size_t>(K));
    for (;;) {
      Rng rng(derive_seed(rec.seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rec.resamples)));
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      std::fill(sum.begin(), sum.end(), 0.0);
      std::fill(cnt.begin(), cnt.end(), 0.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double x = unif(rng);
        const double y = 0.5 * std::sin(2.0 * kPi * x) + noise.draw(rng);
        const auto b = static_cast<std::size_t>(bin_index(x, K));
        sum[b] += y;
        cnt[b] += 1.0;
      }
      if (std::all_of(cnt.begin(), cnt.end(), [](double c) { return c > 0.0; })) break;
      if (++rec.resamples > 100) fail(ErrorCode::EmptyBin, "bins stayed empty after 100 redraws");
    }
    rec.covered = true;
    const double logterm = std::log(2.0 * K / cfg.eta);
    for (int k = 0; k < K; ++k) {
      const double a = static_cast<double>(k) / K, b = static_cast<double>(k + 1) / K;
      // bin mean of sin(2 pi x) / 2
      const double mu = 0.5 * (std::cos(2.0 * kPi * a) - std::cos(2.0 * kPi * b)) / (2.0 * kPi * (b - a));
      const auto kk = static_cast<std::size_t>(k);
      const double err = (sum[kk] / cnt[kk] - mu) * (sum[kk] / cnt[kk] - mu);
      rec.max_sq_error = std::max(rec.max_sq_error, err);
      if (err > range * range * logterm / (2.0 * cnt[kk])) rec.covered = false;
    }
    out[task] = rec;
  });
  return out;
}

RateFit histogram_rate(const std::vector<HistogramRecord>& records) {
  std::map<Eigen::Index, std::pair<double, int>> by_n;
  std::map<Eigen::Index, int> bins;
  bool single = true;
  for (const auto& r : records) {
    by_n[r.n].first += r.max_sq_error;
    by_n[r.n].second += 1;
    bins[r.n] = r.K;
    if (r.K != 1) single = false;
  }
  std::vector<double> x, y;
  for (const auto& [n, acc] : by_n) {
    const double K = bins[n];
    x.push_back(single ? static_cast<double>(n) : K * std::log(K) / static_cast<double>(n));
    y.push_back(acc.first / acc.second);
  }
  return fit_loglog(x, y);
}

double histogram_coverage(const std::vector<HistogramRecord>& records) {
  if (records.empty()) return 0.0;
  const auto hit = std::count_if(records.begin(), records.end(), [](const HistogramRecord& r) { return r.covered; });
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

std::string histogram_csv(const std::vector<HistogramRecord>& records) {
  std::string s = "n,seed,K,max_sq_error,covered,resamples\n";
  for (const auto& r : records)
    s += std::to_string(r.n) + "," + std::to_string(r.seed) + "," + std::to_string(r.K) + "," +
         format_double(r.max_sq_error) + "," + (r.covered ? "true" : "false") + "," + std::to_string(r.resamples) +
         "\n";
  return s;
}

// Uniform local concentration ------------------------------------------------

std::vector<double> local_concentration_stats(const ScenarioSpec& spec, Eigen::Index n, int seeds,
                                              std::uint64_t master_seed, int fixed_probes, int jobs) {
  const Scenario sc = build_scenario(spec);
  if (sc.fstar || sc.cls->dim_d != 1)
    fail(ErrorCode::InvalidArgument, "local concentration check needs a well-specified d = 1 scenario");
  const double dn = critical_radius_envelope(entropy_envelope(*sc.cls), static_cast<double>(n)).value;
  const double s2 = sc.noise.variance();
  Eigen::MatrixXd qx;
  Eigen::VectorXd qw;
  unit_quadrature(qx, qw);
  std::vector<FunctionHandle> fixed;
  for (int k = 0; k < fixed_probes; ++k) {
    const FunctionHandle h = sample_member(sc.cls, derive_seed(master_seed, seed_tag::kProbe, static_cast<std::uint64_t>(k)));
    for (double t : {0.1, 0.5, 1.0}) fixed.push_back(combine(1.0 - t, sc.f0, t, h));
  }
  std::vector<double> out(static_cast<std::size_t>(seeds));
  parallel_for(out.size(), jobs, [&](std::size_t s) {
    const std::uint64_t seed = derive_seed(master_seed, seed_tag::kSweep, s);
    const Dataset data = draw_data(sc, n, derive_seed(seed, static_cast<std::uint64_t>(n), 0));
    const FitResult fit = fit_erm(data, sc.cls);
    std::vector<FunctionHandle> probes = fixed;
    for (double t : {0.25, 0.5, 0.75, 1.0}) probes.push_back(combine(1.0 - t, sc.f0, t, fit.fh));
    const double r0 = empirical_risk(LossSpec::squared(), sc.f0, data);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& f : probes) {
      const Moments m = diff_moments(f, sc.f0, qx, qw);
      if (m.d2 < 1e-300) continue;
      // loss(f0) - loss(f) = 2 eps d - d^2 with d = f - f0
      const double sigma_f = std::sqrt(std::max(0.0, 4.0 * s2 * m.d2 + m.d4 - m.d2 * m.d2));
      const double emp = r0 - empirical_risk(LossSpec::squared(), f, data) + m.d2;
      best = std::max(best, emp / (sigma_f * dn + dn * dn));
    }
    out[s] = best;
  });
  return out;
}

// Nuisance experiments -------------------------------------------------------

ClassPtr cosine_features(int p) { return make_class(linear_desc(FeatureBasis::Cosine, 1, p, 1.0, 1e3)); }

ClassPtr bin_features(int p) { return make_class(linear_desc(FeatureBasis::Bins, 1, p, 1.0, 1e3)); }

namespace {

Eigen::VectorXd default_eta() {
  Eigen::VectorXd eta(3);
  eta << 0.6, 0.0, -1.0;
  return eta;
}

}  // namespace

MissingDesign transfer_design() {
  ScenarioSpec spec{"transfer", linear_desc(FeatureBasis::Cosine, 1, 2, 1.0, 3.0), 0.5, 11, {0.1, 0.5, 0.4, 0.3, 0.2}};
  return make_missing_design(build_scenario(spec), cosine_features(3), default_eta());
}

MissingDesign insample_design() {
  ScenarioSpec spec{"dr_monotone", monotone_desc(1.0), 0.5, 12, {}, tanh_mesh()};
  return make_missing_design(build_scenario(spec), cosine_features(3), default_eta());
}

std::vector<TransferReport> transfer_runs(const MissingDesign& design, const TransferConfig& cfg) {
  const double c_hat = weighted_bernstein(design, cfg.probes, cfg.master_seed);
  const ClassPtr model = cosine_features(3);
  std::vector<TransferReport> out(static_cast<std::size_t>(cfg.runs));
  parallel_for(out.size(), cfg.jobs, [&](std::size_t r) {
    const std::uint64_t seed = derive_seed(cfg.master_seed, seed_tag::kNuisance, r);
    const Dataset aux = draw_missing(design, cfg.n_aux, derive_seed(seed, 1, 0));
    const Dataset data = draw_missing(design, cfg.n, derive_seed(seed, 2, 0));
    const WeightEstimate est = estimate_weights(aux, model, data.x, design);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < data.n(); ++i)
      if ((*data.obs)[i] > 0.5) rows.push_back(i);
    Dataset seen;
    seen.x.resize(static_cast<Eigen::Index>(rows.size()), 1);
    seen.y.resize(static_cast<Eigen::Index>(rows.size()));
    Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      seen.x(kk, 0) = data.x(rows[k], 0);
      seen.y[kk] = data.y[rows[k]];
      w[kk] = est.weights[rows[k]];
    }
    const FitResult fit = fit_weighted_erm(seen, w, design.sc.cls);
    TransferReport rep;
    rep.scenario = design.sc.id;
    rep.seed = seed;
    rep.n = cfg.n;
    rep.reg_true = regret(design.sc, fit.fh);
    const NuisanceFit& nf = est.fit;
    rep.reg_estimated = weighted_regret(design, fit.fh, [&](double x) {
      Eigen::MatrixXd one(1, 1);
      one(0, 0) = x;
      return nf.weights(one)[0];
    });
    rep.chi2 = est.chi2;
    rep.c_hat = c_hat;
    rep.checked = rep.chi2 < 0.25;
    rep.bound_rhs = rep.reg_estimated + 4.0 * c_hat * c_hat * rep.chi2;
    if (rep.checked) rep.bound_rhs = regret_transfer_rhs(rep.reg_estimated, rep.chi2, c_hat);
    rep.holds = rep.reg_true <= rep.bound_rhs;
    out[r] = rep;
  });
  return out;
}

std::vector<Chi2Point> chi2_scaling(const MissingDesign& design, const std::vector<double>& chi2_levels,
                                    Eigen::Index n, int seeds, std::uint64_t master_seed, int jobs) {
  const std::size_t L = chi2_levels.size();
  std::vector<double> excess(L * static_cast<std::size_t>(seeds));
  parallel_for(static_cast<std::size_t>(seeds), jobs, [&](std::size_t s) {
    const std::uint64_t seed = derive_seed(master_seed, seed_tag::kNuisance, s);
    const Dataset data = draw_missing(design, n, derive_seed(seed, 3, 0));
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < data.n(); ++i)
      if ((*data.obs)[i] > 0.5) rows.push_back(i);
    Dataset seen;
    seen.x.resize(static_cast<Eigen::Index>(rows.size()), 1);
    seen.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      seen.x(static_cast<Eigen::Index>(k), 0) = data.x(rows[k], 0);
      seen.y[static_cast<Eigen::Index>(k)] = data.y[rows[k]];
    }
    const Eigen::VectorXd w0 = design.propensity(seen.x).cwiseInverse();
    for (std::size_t l = 0; l < L; ++l) {
      const double t = std::sqrt(chi2_levels[l]);
      auto h = [](double x) { return std::sqrt(2.0) * std::cos(kPi * x); };
      Eigen::VectorXd w(seen.n());
      for (Eigen::Index i = 0; i < seen.n(); ++i) w[i] = w0[i] * (1.0 + t * h(seen.x(i, 0)));
      const FitResult fit = fit_weighted_erm(seen, w, design.sc.cls);
      const double reg_true = regret(design.sc, fit.fh);
      const double reg_est = weighted_regret(design, fit.fh, [&](double x) {
        Eigen::MatrixXd one(1, 1);
        one(0, 0) = x;
        return (1.0 + t * h(x)) / design.propensity(one)[0];
      });
      excess[s * L + l] = reg_true - reg_est;
    }
  });
  std::vector<Chi2Point> out(L);
  for (std::size_t l = 0; l < L; ++l) {
    double m = 0.0;
    for (int s = 0; s < seeds; ++s) m += excess[static_cast<std::size_t>(s) * L + l];
    out[l] = {chi2_levels[l], m / seeds};
  }
  return out;
}

NuisanceConfig insample_config(const std::string& name, Eigen::Index n, const MissingDesign& design) {
  NuisanceConfig cfg;
  cfg.truth = std::make_shared<const MissingDesign>(design);
  cfg.target = NuisanceTarget::PseudoOutcome;
  if (name == "oracle") {
    cfg.fit_mode = FitMode::OracleTruth;
  } else if (name == "donsker") {
    cfg.fit_mode = FitMode::InSample;
    cfg.estimator_class = cosine_features(3);
  } else if (name == "rich") {
    cfg.fit_mode = FitMode::InSample;
    cfg.estimator_class = bin_features(static_cast<int>(std::max<Eigen::Index>(1, n / 4)));
  } else if (name == "crossfit") {
    cfg.fit_mode = FitMode::CrossFit;
    cfg.folds = 5;
    cfg.estimator_class = cosine_features(3);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown nuisance config: " + name);
  }
  return cfg;
}

std::vector<NuisanceRecord> insample_sweep(const MissingDesign& design, const std::string& config,
                                           const std::vector<Eigen::Index>& n_grid, int seeds,
                                           std::uint64_t master_seed, int jobs) {
  const std::size_t S = static_cast<std::size_t>(seeds);
  std::vector<NuisanceRecord> out(n_grid.size() * S);
  parallel_for(out.size(), jobs, [&](std::size_t task) {
    const Eigen::Index n = n_grid[task / S];
    const std::uint64_t seed = derive_seed(master_seed, seed_tag::kNuisance, task % S);
    const Dataset data = draw_missing(design, n, derive_seed(seed, static_cast<std::uint64_t>(n), 0));
    const NuisanceConfig cfg = insample_config(config, n, design);
    const NuisanceErmResult res = nuisance_erm(data, cfg, design.sc.cls, seed);
    NuisanceRecord rec;
    rec.config = config;
    rec.n = n;
    rec.seed = seed;
    rec.l2_error = std::sqrt(l2_distance_sq(design.sc.f0, res.fit.fh, design.sc.marginal).value);
    rec.propensity_error = res.propensity_error;
    rec.outcome_error = res.outcome_error;
    out[task] = rec;
  });
  return out;
}

RateFit fit_nuisance_rate(const std::vector<NuisanceRecord>& records) {
  std::vector<double> ns, means, medians;
  group_by_n(records, [](const NuisanceRecord& r) { return r.l2_error; }, ns, means, medians);
  RateFit fit = fit_loglog(ns, means);
  fit.median_slope = fit_loglog(ns, medians).slope;
  return fit;
}

std::string nuisance_csv(const std::vector<NuisanceRecord>& records) {
  std::string s = "config,n,seed,l2_error,propensity_error,outcome_error\n";
  for (const auto& r : records)
    s += r.config + "," + std::to_string(r.n) + "," + std::to_string(r.seed) + "," + format_double(r.l2_error) + "," +
         format_double(r.propensity_error) + "," + format_double(r.outcome_error) + "\n";
  return s;
}

}  // namespace ermlab
