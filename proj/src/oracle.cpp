#include "ermlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ermlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr int kMcFallbackDraws = 1000000;
constexpr int kQuadPanels = 512;

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846); }

bool same_features(const ClassDescriptor& a, const ClassDescriptor& b) {
  return is_linear_kind(a.kind) && is_linear_kind(b.kind) && a.basis == b.basis && a.p() == b.p() &&
         a.dim_d == b.dim_d;
}

double mesh_at(const MeshRep& m, double x) {
  const auto& t = m.knots;
  if (t.size() == 1 || x <= t.front()) return m.values.front();
  if (x >= t.back()) return m.values.back();
  const auto k = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), x) - t.begin()) - 1;
  return m.values[k] + (x - t[k]) / (t[k + 1] - t[k]) * (m.values[k + 1] - m.values[k]);
}

double mesh_mesh(const MeshRep& f, const MeshRep& g) {
  std::vector<double> b{0.0, 1.0};
  for (double t : f.knots)
    if (t > 0.0 && t < 1.0) b.push_back(t);
  for (double t : g.knots)
    if (t > 0.0 && t < 1.0) b.push_back(t);
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  double s = 0.0;
  double da = mesh_at(f, b[0]) - mesh_at(g, b[0]);
  for (std::size_t k = 0; k + 1 < b.size(); ++k) {
    const double db = mesh_at(f, b[k + 1]) - mesh_at(g, b[k + 1]);
    s += (b[k + 1] - b[k]) * (da * da + da * db + db * db) / 3.0;
    da = db;
  }
  return s;
}

}  // namespace

double TruncatedNoise::variance() const {
  if (sigma == 0.0) return 0.0;
  const double a = kCut;
  const double mass = std::erf(a / std::sqrt(2.0));  // 2 Phi(a) - 1
  return sigma * sigma * (1.0 - 2.0 * a * std_normal_pdf(a) / mass);
}

double TruncatedNoise::draw(Rng& rng) const {
  if (sigma == 0.0) return 0.0;
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    const double z = g(rng);
    if (std::abs(z) <= kCut) return sigma * z;
  }
}

Scenario make_scenario(std::string id, ClassPtr cls, double sigma, std::uint64_t seed, Marginal marginal) {
  if (sigma < 0.0) fail(ErrorCode::InvalidArgument, "noise sigma must be nonnegative");
  FunctionHandle f0 = sample_member(cls, derive_seed(seed, seed_tag::kScenario, 0));
  return Scenario{std::move(id), std::move(cls), std::move(f0), std::nullopt, std::move(marginal),
                  TruncatedNoise{sigma}, seed};
}

Dataset draw_data(const Scenario& sc, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.x = sample_points(sc.marginal, sc.cls->dim_d, static_cast<int>(n), rng);
  d.y = eval(sc.regression(), d.x, SupCheck::Ignore);
  for (Eigen::Index i = 0; i < n; ++i) d.y[i] += sc.noise.draw(rng);
  return d;
}

void gauss_legendre_unit(int panels, std::vector<double>& nodes, std::vector<double>& weights) {
  static constexpr double x8[4] = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363};
  static constexpr double w8[4] = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
  nodes.clear();
  weights.clear();
  const double h = 1.0 / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * h;
    for (int k = 0; k < 4; ++k) {
      for (double s : {-1.0, 1.0}) {
        nodes.push_back(mid + s * x8[k] * 0.5 * h);
        weights.push_back(w8[k] * 0.5 * h);
      }
    }
  }
}

FunctionHandle l2_projection(const ClassPtr& linear_cls, const FunctionHandle& target,
                             const std::function<double(double)>& u) {
  if (linear_cls->kind != ClassKind::LinearSpan || linear_cls->dim_d != 1)
    fail(ErrorCode::UnsupportedClassKind, "projection needs a d = 1 LinearSpan");
  std::vector<double> nodes, weights;
  gauss_legendre_unit(512, nodes, weights);
  const Eigen::Index q = static_cast<Eigen::Index>(nodes.size());
  Eigen::MatrixXd x(q, 1);
  for (Eigen::Index i = 0; i < q; ++i) x(i, 0) = nodes[i];
  const Eigen::MatrixXd phi = feature_matrix(*linear_cls, x);
  const Eigen::VectorXd t = eval(target, x, SupCheck::Ignore);
  Eigen::VectorXd w(q);
  for (Eigen::Index i = 0; i < q; ++i) w[i] = weights[i] * (u ? u(nodes[i]) : 1.0);
  const Eigen::MatrixXd G = phi.transpose() * w.asDiagonal() * phi;
  const Eigen::VectorXd b = phi.transpose() * w.asDiagonal() * t;
  return FunctionHandle(linear_cls, LinearRep{G.ldlt().solve(b)});
}

Scenario make_misspecified_scenario(std::string id, ClassPtr cls, FunctionHandle fstar, double sigma,
                                    std::uint64_t seed) {
  if (sigma < 0.0) fail(ErrorCode::InvalidArgument, "noise sigma must be nonnegative");
  FunctionHandle f0 = l2_projection(cls, fstar);
  return Scenario{std::move(id), std::move(cls), std::move(f0), std::move(fstar), Marginal::uniform(),
                  TruncatedNoise{sigma}, seed};
}

NormInfo l2_distance_sq(const FunctionHandle& f, const FunctionHandle& g, const Marginal& marginal) {
  const auto* lf = std::get_if<LinearRep>(&f.rep());
  const auto* lg = std::get_if<LinearRep>(&g.rep());
  if (lf && lg && same_features(f.cls(), g.cls())) {
    const Eigen::VectorXd d = lf->theta - lg->theta;
    return {d.dot(feature_second_moment(f.cls(), marginal) * d)};
  }
  const bool uniform = marginal.kind == Marginal::Kind::UniformCube;
  if (uniform) {
    const auto* sf = std::get_if<SeriesRep>(&f.rep());
    const auto* sg = std::get_if<SeriesRep>(&g.rep());
    if (sf && sg) {
      const Eigen::Index J = std::max(sf->theta.size(), sg->theta.size());
      Eigen::VectorXd d = Eigen::VectorXd::Zero(J);
      d.head(sf->theta.size()) += sf->theta;
      d.head(sg->theta.size()) -= sg->theta;
      return {d.squaredNorm()};
    }
    const auto* mf = std::get_if<MeshRep>(&f.rep());
    const auto* mg = std::get_if<MeshRep>(&g.rep());
    if (mf && mg) return {mesh_mesh(*mf, *mg)};
  }

  const int d = f.cls().dim_d;
  if (g.cls().dim_d != d) fail(ErrorCode::DimensionMismatch, "handles live in different dimensions");
  if (uniform && d <= 2) {
    std::vector<double> nodes, weights;
    gauss_legendre_unit(kQuadPanels / (d == 1 ? 1 : 8), nodes, weights);
    const auto q = static_cast<Eigen::Index>(nodes.size());
    Eigen::MatrixXd pts(d == 1 ? q : q * q, d);
    Eigen::VectorXd w(pts.rows());
    if (d == 1) {
      for (Eigen::Index i = 0; i < q; ++i) {
        pts(i, 0) = nodes[i];
        w[i] = weights[i];
      }
    } else {
      for (Eigen::Index i = 0; i < q; ++i)
        for (Eigen::Index j = 0; j < q; ++j) {
          pts(i * q + j, 0) = nodes[i];
          pts(i * q + j, 1) = nodes[j];
          w[i * q + j] = weights[i] * weights[j];
        }
    }
    const Eigen::VectorXd diff = eval(f, pts, SupCheck::Ignore) - eval(g, pts, SupCheck::Ignore);
    return {w.dot(diff.cwiseAbs2())};
  }

  // Monte Carlo fallback with a fixed stream.
  Rng rng(derive_seed(0, seed_tag::kOracleMc, 0));
  const Eigen::MatrixXd pts = sample_points(marginal, d, kMcFallbackDraws, rng);
  const Eigen::ArrayXd sq = (eval(f, pts, SupCheck::Ignore) - eval(g, pts, SupCheck::Ignore)).array().square();
  const double mean = sq.mean();
  const double var = (sq - mean).square().sum() / (kMcFallbackDraws - 1.0);
  return {mean, true, std::sqrt(var / kMcFallbackDraws)};
}

double l2_norm_sq(const FunctionHandle& f, const Marginal& marginal) {
  return l2_distance_sq(f, zero_function(f.class_ptr()), marginal).value;
}

double population_risk(const Scenario& sc, const FunctionHandle& fh, bool* monte_carlo) {
  const auto d = l2_distance_sq(sc.regression(), fh, sc.marginal);
  if (monte_carlo) *monte_carlo = d.monte_carlo;
  return sc.noise.variance() + d.value;
}

double regret(const Scenario& sc, const FunctionHandle& fh) {
  return population_risk(sc, fh) - population_risk(sc, sc.f0);
}

double fluctuation(const Scenario& sc, const Dataset& data, const FunctionHandle& fh) {
  const auto sq = LossSpec::squared();
  const double emp = empirical_risk(sq, sc.f0, data) - empirical_risk(sq, fh, data);
  const double pop = population_risk(sc, sc.f0) - population_risk(sc, fh);
  return emp - pop;
}

RegretRecord make_record(const Scenario& sc, const Dataset& data, const FitResult& fit, std::uint64_t seed) {
  RegretRecord r;
  r.n = data.n();
  r.seed = seed;
  r.scenario = sc.id;
  const auto sq = LossSpec::squared();
  r.emp_risk = empirical_risk(sq, fit.fh, data);
  bool mc = false;
  r.pop_risk = population_risk(sc, fit.fh, &mc);
  const double pop0 = population_risk(sc, sc.f0);
  r.regret = r.pop_risk - pop0;
  r.l2_error = std::sqrt(l2_distance_sq(sc.f0, fit.fh, sc.marginal).value);
  r.fluctuation = (empirical_risk(sq, sc.f0, data) - r.emp_risk) - (pop0 - r.pop_risk);
  std::vector<std::string> flags;
  if (!fit.meta.converged) flags.push_back("nonconverged");
  if (mc) flags.push_back("mc_fallback");
  for (std::size_t k = 0; k < flags.size(); ++k) r.flags += (k ? "|" : "") + flags[k];
  return r;
}

std::string record_csv_header() { return "n,seed,scenario,emp_risk,pop_risk,regret,l2_error,fluctuation,flags"; }

std::string record_csv_row(const RegretRecord& r) {
  return std::to_string(r.n) + "," + std::to_string(r.seed) + "," + r.scenario + "," + format_double(r.emp_risk) + "," +
         format_double(r.pop_risk) + "," + format_double(r.regret) + "," + format_double(r.l2_error) + "," +
         format_double(r.fluctuation) + "," + r.flags;
}

ProbeStats probe_conditions(const Scenario& sc, int probe_count, std::uint64_t seed, int mc_draws) {
  if (probe_count < 1) fail(ErrorCode::InvalidArgument, "probe_count must be at least 1");
  Rng rng(derive_seed(seed, seed_tag::kOracleMc, 0));
  const Eigen::MatrixXd x = sample_points(sc.marginal, sc.cls->dim_d, mc_draws, rng);
  Eigen::VectorXd y = eval(sc.regression(), x, SupCheck::Ignore);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += sc.noise.draw(rng);
  const Eigen::VectorXd f0x = eval(sc.f0, x, SupCheck::Ignore);

  ProbeStats st;
  st.kappa = std::numeric_limits<double>::infinity();
  for (int k = 0; k < probe_count; ++k) {
    const FunctionHandle h = sample_member(sc.cls, derive_seed(seed, seed_tag::kProbe, static_cast<std::uint64_t>(k)));
    for (double t : {0.01, 0.1, 1.0}) {
      const FunctionHandle f = combine(1.0 - t, sc.f0, t, h);
      const double reg = regret(sc, f);
      const double dist2 = l2_distance_sq(f, sc.f0, sc.marginal).value;
      if (reg < 1e-12 || dist2 < 1e-24) {
        ++st.skipped;
        continue;
      }
      const Eigen::VectorXd fx = eval(f, x, SupCheck::Ignore);
      // (y - f)^2 - (y - f0)^2
      const Eigen::ArrayXd diff = (f0x - fx).array() * (2.0 * y - fx - f0x).array();
      const double mean = diff.mean();
      const double second = diff.square().mean();
      const double var = std::max(0.0, second - mean * mean);
      st.bernstein = std::max(st.bernstein, var / reg);
      st.kappa = std::min(st.kappa, reg / dist2);
      st.lipschitz = std::max(st.lipschitz, std::sqrt(second / dist2));
      ++st.used;
    }
  }
  if (st.used == 0) fail(ErrorCode::DegenerateProbe, "every probe had regret below 1e-12");
  return st;
}

double bernstein_ratio(const Scenario& sc, int probe_count, std::uint64_t seed) {
  return probe_conditions(sc, probe_count, seed).bernstein;
}

Curvature curvature_ratio(const Scenario& sc, int probe_count, std::uint64_t seed) {
  const auto st = probe_conditions(sc, probe_count, seed);
  return {st.kappa, st.lipschitz};
}

FunctionHandle population_tikhonov_minimizer(const Scenario& sc, double lambda) {
  const auto* r = std::get_if<LinearRep>(&sc.regression().rep());
  if (sc.cls->kind != ClassKind::LinearSpan || !r || !same_features(*sc.cls, sc.regression().cls()))
    fail(ErrorCode::UnsupportedClassKind, "population Tikhonov minimizer needs a linear f* in a LinearSpan");
  return {sc.cls, LinearRep{r->theta / (1.0 + 0.5 * lambda)}};
}

double regularized_population_risk(const Scenario& sc, const FunctionHandle& fh, double lambda) {
  return population_risk(sc, fh) + 0.5 * lambda * l2_norm_sq(fh, sc.marginal);
}

}  // namespace ermlab
