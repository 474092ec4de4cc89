#include "ermlab/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ermlab/erm.hpp"

namespace ermlab {

namespace {

// Precomputes everything about (class, points, norm mode) that does not
// depend on the signs or the radius.
class LocalSupSolver {
 public:
  LocalSupSolver(const ClassDescriptor& cls, const Eigen::MatrixXd& points, NormMode mode, const Marginal& marginal)
      : cls_(cls), n_(points.rows()) {
    if (points.cols() != cls.dim_d) fail(ErrorCode::DimensionMismatch, "points dimension differs from class d");
    switch (cls.kind) {
      case ClassKind::LinearSpan: {
        phi_ = feature_matrix(cls, points);
        const Eigen::MatrixXd S = mode == NormMode::PopulationL2
                                      ? feature_second_moment(cls, marginal)
                                      : Eigen::MatrixXd(phi_.transpose() * phi_ / static_cast<double>(n_));
        s_pinv_ = S.completeOrthogonalDecomposition().pseudoInverse();
        break;
      }
      case ClassKind::L1Ball: {
        phi_ = feature_matrix(cls, points);
        col_norm_.resize(phi_.cols());
        if (mode == NormMode::PopulationL2) {
          col_norm_ = feature_second_moment(cls, marginal).diagonal().cwiseSqrt();
        } else {
          for (Eigen::Index j = 0; j < phi_.cols(); ++j)
            col_norm_[j] = std::sqrt(phi_.col(j).squaredNorm() / static_cast<double>(n_));
        }
        break;
      }
      case ClassKind::Monotone:
      case ClassKind::LipschitzMesh: {
        if (mode == NormMode::PopulationL2 && marginal.kind != Marginal::Kind::UniformCube)
          fail(ErrorCode::UnsupportedNormModeForClass, "mesh population norms assume a uniform marginal");
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), Eigen::Index{0});
        std::stable_sort(order_.begin(), order_.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return points(a, 0) < points(b, 0); });
        group_.resize(n_);
        for (Eigen::Index r = 0; r < n_; ++r) {
          const double t = points(order_[r], 0);
          if (knots_.empty() || knots_.back() != t) {
            knots_.push_back(t);
            counts_.push_back(0.0);
          }
          counts_.back() += 1.0;
          group_[order_[r]] = knots_.size() - 1;
        }
        const std::size_t K = knots_.size();
        weights_.resize(K);
        if (mode == NormMode::EmpiricalL2) {
          for (std::size_t k = 0; k < K; ++k) weights_[k] = counts_[k] / static_cast<double>(n_);
        } else if (K == 1) {
          weights_[0] = 1.0;
        } else {
          for (std::size_t k = 0; k < K; ++k) {
            const double left = k == 0 ? knots_[0] : 0.5 * (knots_[k] - knots_[k - 1]);
            const double right = k + 1 == K ? 1.0 - knots_[k] : 0.5 * (knots_[k + 1] - knots_[k]);
            weights_[k] = std::max(left, 0.0) + std::max(right, 0.0);
          }
        }
        if (cls.kind == ClassKind::LipschitzMesh)
          for (std::size_t k = 0; k + 1 < K; ++k) gaps_.push_back(*cls.lipschitz_L * (knots_[k + 1] - knots_[k]));
        break;
      }
      default:
        fail(ErrorCode::UnsupportedClassKind,
             "no localized sup solver for " + std::string(to_string(cls.kind)));
    }
  }

  /// Values at each delta of `grid`.
  std::vector<double> operator()(const Eigen::VectorXd& signs, const std::vector<double>& grid) const {
    if (signs.size() != n_) fail(ErrorCode::ShapeMismatch, "signs length differs from number of points");
    std::vector<double> out(grid.size(), 0.0);
    const double n = static_cast<double>(n_);
    switch (cls_.kind) {
      case ClassKind::LinearSpan: {
        const Eigen::VectorXd g = phi_.transpose() * signs / n;
        const double dual = std::sqrt(std::max(0.0, g.dot(s_pinv_ * g)));
        for (std::size_t k = 0; k < grid.size(); ++k) out[k] = grid[k] * dual;
        return out;
      }
      case ClassKind::L1Ball: {
        const Eigen::VectorXd g = phi_.transpose() * signs / n;
        const double B = cls_.B();
        for (std::size_t k = 0; k < grid.size(); ++k) {
          double best = 0.0;
          for (Eigen::Index j = 0; j < g.size(); ++j) {
            const double scale = col_norm_[j] > 0.0 ? std::min(B, grid[k] / col_norm_[j]) : B;
            best = std::max(best, scale * std::abs(g[j]));
          }
          out[k] = best;
        }
        return out;
      }
      default: break;
    }

    std::vector<double> a(knots_.size(), 0.0);
    for (Eigen::Index i = 0; i < n_; ++i) a[group_[i]] += signs[i] / n;
    std::vector<double> target(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) target[k] = a[k] / weights_[k];
    for (std::size_t k = 0; k < grid.size(); ++k)
      out[k] = cls_.kind == ClassKind::Monotone ? monotone(a, target, grid[k]) : lipschitz(a, target, grid[k]);
    return out;
  }

 private:
  double wnorm2(const std::vector<double>& v) const {
    double s = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) s += weights_[k] * v[k] * v[k];
    return s;
  }

  static double dot(const std::vector<double>& a, const std::vector<double>& v) {
    return std::inner_product(a.begin(), a.end(), v.begin(), 0.0);
  }

  // Maximizer of a'v - (mu/2) sum w v^2 over monotone boxed v is clip(s u)
  // with u the weighted isotonic fit of a / w and s = 1 / mu.
  double monotone(const std::vector<double>& a, const std::vector<double>& target, double delta) const {
    const double M = cls_.M();
    const auto u = pava(target, weights_);
    auto path = [&](double s) {
      std::vector<double> v(u.size());
      for (std::size_t k = 0; k < u.size(); ++k) v[k] = std::clamp(s * u[k], -M, M);
      return v;
    };
    std::vector<double> far(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) far[k] = u[k] > 0 ? M : (u[k] < 0 ? -M : 0.0);
    const double d2 = delta * delta;
    if (wnorm2(far) <= d2) return dot(a, far);
    const double unorm = std::sqrt(wnorm2(u));
    double lo = delta / unorm;
    double hi = 2.0 * lo;
    while (wnorm2(path(hi)) < d2) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (wnorm2(path(mid)) <= d2)
        lo = mid;
      else
        hi = mid;
    }
    return dot(a, path(lo));
  }

  double lipschitz(const std::vector<double>& a, const std::vector<double>& target, double delta) const {
    const double M = cls_.M();
    double tmax = 0.0;
    for (double t : target) tmax = std::max(tmax, std::abs(t));
    if (tmax == 0.0) return 0.0;
    auto path = [&](double s) {
      std::vector<double> y(target.size());
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = s * target[k];
      return lipschitz_project(y, weights_, gaps_, M);
    };
    const double d2 = delta * delta;
    const auto far = path(1e8 * M / tmax);
    if (wnorm2(far) <= d2) return dot(a, far);
    double lo = delta / std::sqrt(wnorm2(target));
    double hi = 2.0 * lo;
    while (wnorm2(path(hi)) < d2) hi *= 2.0;
    for (int it = 0; it < 100 && hi - lo > 1e-12 * hi; ++it) {
      const double mid = std::sqrt(lo * hi);
      if (wnorm2(path(mid)) <= d2)
        lo = mid;
      else
        hi = mid;
    }
    return dot(a, path(lo));
  }

  const ClassDescriptor& cls_;
  Eigen::Index n_;
  Eigen::MatrixXd phi_;
  Eigen::MatrixXd s_pinv_;
  Eigen::VectorXd col_norm_;
  std::vector<Eigen::Index> order_;
  std::vector<std::size_t> group_;
  std::vector<double> knots_, counts_, weights_, gaps_;
};

double finite_sup(const FiniteClass& fc, const Eigen::VectorXd& signs, double delta) {
  const Eigen::Index n = fc.values.rows();
  if (signs.size() != n) fail(ErrorCode::ShapeMismatch, "signs length differs from number of points");
  if (fc.norms.size() != fc.values.cols()) fail(ErrorCode::ShapeMismatch, "norms length differs from member count");
  const Eigen::VectorXd ip = fc.values.transpose() * signs / static_cast<double>(n);
  bool any = false;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < ip.size(); ++j) {
    if (fc.star_hull) {
      const double t = fc.norms[j] > 0.0 ? std::min(1.0, delta / fc.norms[j]) : 1.0;
      best = std::max(best, std::max(0.0, t * ip[j]));
      any = true;
    } else if (fc.norms[j] <= delta) {
      best = std::max(best, ip[j]);
      any = true;
    }
  }
  return any ? best : 0.0;
}

McEstimate summarize(const std::vector<double>& v) {
  McEstimate e;
  e.reps = static_cast<int>(v.size());
  if (v.empty()) return e;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  e.estimate = mean;
  e.stderr_ = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
  return e;
}

}  // namespace

Eigen::VectorXd rademacher_signs(Eigen::Index n, std::uint64_t seed, int rep) {
  Rng rng(derive_seed(seed, seed_tag::kComplexity, static_cast<std::uint64_t>(rep)));
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) s[i] = (rng() >> 63) ? 1.0 : -1.0;
  return s;
}

double local_sup(const ClassDescriptor& cls, const Eigen::MatrixXd& points, const Eigen::VectorXd& signs,
                 double delta, NormMode mode, const Marginal& marginal) {
  if (!(delta > 0.0)) fail(ErrorCode::NonPositiveParameter, "delta must be positive");
  return LocalSupSolver(cls, points, mode, marginal)(signs, {delta}).front();
}

double local_sup(const FiniteClass& fc, const Eigen::VectorXd& signs, double delta) {
  return finite_sup(fc, signs, delta);
}

McEstimate empirical_local_rademacher(const ClassDescriptor& cls, const Eigen::MatrixXd& points, double delta,
                                      int reps, std::uint64_t seed, NormMode mode, int jobs,
                                      const Marginal& marginal) {
  const auto curve = complexity_curve(cls, points, {delta}, reps, seed, mode, jobs, marginal);
  return {curve.raw.front(), curve.stderrs.front(), reps};
}

McEstimate empirical_local_rademacher(const FiniteClass& fc, double delta, int reps, std::uint64_t seed) {
  if (reps < 2) fail(ErrorCode::InvalidArgument, "need at least two replications");
  std::vector<double> v(reps);
  for (int r = 0; r < reps; ++r) v[r] = finite_sup(fc, rademacher_signs(fc.values.rows(), seed, r), delta);
  return summarize(v);
}

double exact_rademacher_oracle(const Eigen::MatrixXd& member_values, double delta, const Eigen::VectorXd& member_norms,
                               bool star_hull) {
  const Eigen::Index n = member_values.rows();
  const Eigen::Index m = member_values.cols();
  if (n > 20) fail(ErrorCode::TooLargeForEnumeration, "exact enumeration needs n <= 20");
  if (member_norms.size() != m) fail(ErrorCode::ShapeMismatch, "norms length differs from member count");
  const std::uint64_t patterns = std::uint64_t{1} << n;
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    double best = 0.0;
    bool seen = false;
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += ((mask >> i) & 1U ? 1.0 : -1.0) * member_values(i, j);
      s /= static_cast<double>(n);
      double cand;
      if (star_hull) {
        // sup over t in [0, min(1, delta / ||f||)] of t * s
        const double tmax = member_norms[j] > 0.0 ? std::min(1.0, delta / member_norms[j]) : 1.0;
        cand = s > 0.0 ? tmax * s : 0.0;
      } else {
        if (member_norms[j] > delta) continue;
        cand = s;
      }
      best = seen ? std::max(best, cand) : cand;
      seen = true;
    }
    total += best;
  }
  return total / static_cast<double>(patterns);
}

std::vector<double> default_delta_grid(double M, int count) {
  std::vector<double> g(count);
  const double lo = std::log(1e-3 * M);
  const double hi = std::log(2.0 * M);
  for (int k = 0; k < count; ++k) g[k] = std::exp(lo + (hi - lo) * k / (count - 1));
  return g;
}

ComplexityCurve make_curve(std::vector<double> grid, std::vector<double> raw, std::vector<double> stderrs,
                           Eigen::Index n, int reps, NormMode mode) {
  if (grid.size() != raw.size() || grid.size() != stderrs.size())
    fail(ErrorCode::ShapeMismatch, "curve arrays differ in length");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) fail(ErrorCode::InvalidArgument, "delta grid must be strictly increasing");
  ComplexityCurve c;
  c.estimates = pava(raw, std::vector<double>(raw.size(), 1.0));
  for (auto& e : c.estimates) e = std::max(e, 0.0);
  c.delta_grid = std::move(grid);
  c.raw = std::move(raw);
  c.stderrs = std::move(stderrs);
  c.n = n;
  c.reps = reps;
  c.norm_mode = mode;
  return c;
}

ComplexityCurve complexity_curve(const ClassDescriptor& cls, const Eigen::MatrixXd& points,
                                 const std::vector<double>& grid, int reps, std::uint64_t seed, NormMode mode, int jobs,
                                 const Marginal& marginal) {
  if (reps < 2) fail(ErrorCode::InvalidArgument, "need at least two replications");
  for (double d : grid)
    if (!(d > 0.0)) fail(ErrorCode::NonPositiveParameter, "delta must be positive");
  const LocalSupSolver solver(cls, points, mode, marginal);
  std::vector<std::vector<double>> per_rep(reps);
  parallel_for(static_cast<std::size_t>(reps), jobs, [&](std::size_t r) {
    per_rep[r] = solver(rademacher_signs(points.rows(), seed, static_cast<int>(r)), grid);
  });
  std::vector<double> raw(grid.size()), se(grid.size());
  std::vector<double> column(reps);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (int r = 0; r < reps; ++r) column[r] = per_rep[r][k];
    const auto s = summarize(column);
    raw[k] = s.estimate;
    se[k] = s.stderr_;
  }
  return make_curve(grid, std::move(raw), std::move(se), points.rows(), reps, mode);
}

std::string curve_csv(const ComplexityCurve& c) {
  std::string out = "delta,estimate,stderr,n,reps,norm_mode\n";
  for (std::size_t k = 0; k < c.delta_grid.size(); ++k) {
    out += format_double(c.delta_grid[k]) + "," + format_double(c.estimates[k]) + "," + format_double(c.stderrs[k]) +
           "," + std::to_string(c.n) + "," + std::to_string(c.reps) + "," + std::string(to_string(c.norm_mode)) + "\n";
  }
  return out;
}

double rkhs_local_bound(const Eigen::VectorXd& eigenvalues, double R, double delta, double n) {
  if (delta <= 0.0) return 0.0;
  const double d2 = delta * delta;
  const double r2 = R * R;
  double s = 0.0;
  for (Eigen::Index j = eigenvalues.size(); j-- > 0;) s += std::min(d2, r2 * eigenvalues[j]);
  return std::sqrt(s / n);
}

Envelope transform_envelope(const Envelope& env, const EnvelopeTransform& t) {
  switch (t.kind) {
    case EnvelopeTransform::Kind::LipschitzScale: {
      const double L = t.param;
      if (!(L > 0.0)) fail(ErrorCode::NonPositiveParameter, "Lipschitz constant must be positive");
      Envelope out;
      for (const auto& p : env.power_terms()) {
        PowerLogTerm q = p;
        q.coeff = p.coeff * std::pow(L, -p.gamma);
        if (p.log_power != 0.0) q.log_scale = std::max(p.log_scale * L, p.log_scale);
        out.add(q);
      }
      for (const auto& s : env.star_terms()) out.add(StarHullTerm{s.coeff / L, s.sup_bound * L});
      return out;
    }
    case EnvelopeTransform::Kind::StarHull: {
      if (!(t.param > 0.0)) fail(ErrorCode::NonPositiveParameter, "star hull needs M > 0");
      Envelope out = env;
      out.add(StarHullTerm{1.0, t.param});
      return out;
    }
    case EnvelopeTransform::Kind::Sum: {
      if (!t.other) fail(ErrorCode::InvalidArgument, "sum transform needs a second envelope");
      Envelope out = env;
      for (const auto& p : t.other->power_terms()) out.add(p);
      for (const auto& s : t.other->star_terms()) out.add(s);
      return out;
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown envelope transform");
}

std::string_view to_string(CriticalMethod m) {
  switch (m) {
    case CriticalMethod::EmpiricalCurve: return "EmpiricalCurve";
    case CriticalMethod::EnvelopeFixedPoint: return "EnvelopeFixedPoint";
    case CriticalMethod::ClosedForm: return "ClosedForm";
  }
  return "Unknown";
}

double solve_complexity_fixed_point(const std::function<double(double)>& complexity, double lo, double hi,
                                    double rel_tol) {
  auto h = [&](double d) { return complexity(d) - d * d; };
  if (!(h(lo) > 0.0)) fail(ErrorCode::NoCrossingInRange, "complexity below delta^2 at the lower end");
  if (h(hi) > 0.0) fail(ErrorCode::NoCrossingInRange, "complexity above delta^2 at the upper end");
  // Stop at rel_tol / 4 so that the returned upper end satisfies the
  // two-sided certificate with slack rel_tol.
  while (hi / lo - 1.0 > 0.25 * rel_tol) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    if (h(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

CriticalRadius critical_radius_envelope(const Envelope& env, double n, bool force_bisection) {
  if (!(n >= 1.0)) fail(ErrorCode::InvalidArgument, "n must be at least 1");
  validate_envelope(env);
  CriticalRadius out;
  out.envelope = env;
  out.n = n;
  const double rn = std::sqrt(n);
  if (env.is_pure_power() && !force_bisection) {
    const auto& t = env.power_terms().front();
    out.method = CriticalMethod::ClosedForm;
    out.value = t.coeff == 0.0 ? 0.0 : std::pow(t.coeff / rn, 1.0 / (2.0 - t.gamma));
    return out;
  }
  out.method = CriticalMethod::EnvelopeFixedPoint;
  // phi(delta) = sqrt(n) delta^2  <=>  phi(delta) / sqrt(n) = delta^2
  out.value = solve_complexity_fixed_point([&](double d) { return env(d) / rn; }, 1e-12, 1.0);
  return out;
}

CriticalRadius critical_radius_empirical(const ComplexityCurve& curve) {
  const auto& g = curve.delta_grid;
  const auto& e = curve.estimates;
  CriticalRadius out;
  out.method = CriticalMethod::EmpiricalCurve;
  out.n = static_cast<double>(curve.n);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double hk = e[k] - g[k] * g[k];
    if (hk > 0.0) continue;
    if (k == 0) {
      out.value = g[0];
      return out;
    }
    const double hp = e[k - 1] - g[k - 1] * g[k - 1];
    out.value = g[k - 1] + hp * (g[k] - g[k - 1]) / (hp - hk);
    return out;
  }
  fail(ErrorCode::NoCrossing, "complexity curve stays above delta^2 on the grid");
}

}  // namespace ermlab
