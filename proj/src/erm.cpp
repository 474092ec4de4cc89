#include "ermlab/erm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ermlab {

namespace {

Eigen::VectorXd weights_or_ones(const FitOptions& opt, Eigen::Index n) {
  if (!opt.weights) return Eigen::VectorXd::Ones(n);
  if (opt.weights->size() != n) fail(ErrorCode::ShapeMismatch, "weights length differs from n");
  return *opt.weights;
}

// Sorted unique abscissae with tie-pooled responses and summed weights.
// Zero-weight points carry no information and are dropped.
struct Pooled {
  std::vector<double> t, y, w;
};

Pooled pool_ties(const Dataset& data, const Eigen::VectorXd& w) {
  const Eigen::Index n = data.n();
  std::vector<Eigen::Index> order;
  order.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (w[i] > 0.0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return data.x(a, 0) < data.x(b, 0); });
  Pooled p;
  for (Eigen::Index i : order) {
    const double xi = data.x(i, 0);
    if (!p.t.empty() && p.t.back() == xi) {
      const double wn = p.w.back() + w[i];
      p.y.back() = (p.w.back() * p.y.back() + w[i] * data.y[i]) / wn;
      p.w.back() = wn;
    } else {
      p.t.push_back(xi);
      p.y.push_back(data.y[i]);
      p.w.push_back(w[i]);
    }
  }
  return p;
}

void require_kind(const ClassDescriptor& cls, ClassKind kind, const char* who) {
  if (cls.kind != kind)
    fail(ErrorCode::UnsupportedClassKind, std::string(who) + " does not accept class " + std::string(to_string(cls.kind)));
}

double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

// Derivative of a convex value function: piecewise linear between points,
// repeated abscissae encode jumps.
struct DerivPt {
  double x, d;
};

double deriv_argmin(const std::vector<DerivPt>& p, std::size_t* split) {
  std::size_t k = 0;
  while (k < p.size() && p[k].d < 0.0) ++k;
  *split = k;
  if (k == 0) return p.front().x;
  if (k == p.size()) return p.back().x;
  const auto& a = p[k - 1];
  const auto& b = p[k];
  if (b.x == a.x) return b.x;
  return a.x + (0.0 - a.d) * (b.x - a.x) / (b.d - a.d);
}

void deriv_clip(std::vector<DerivPt>& p, double lo, double hi) {
  std::size_t j = 0;
  while (j < p.size() && p[j].x < lo) ++j;
  if (j > 0) {
    if (j < p.size() && p[j].x > lo) {
      const auto& a = p[j - 1];
      const auto& b = p[j];
      p[j - 1] = {lo, a.d + (b.d - a.d) * (lo - a.x) / (b.x - a.x)};
      --j;
    }
    p.erase(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(j));
  }
  std::size_t r = p.size();
  while (r > 0 && p[r - 1].x > hi) --r;
  if (r < p.size()) {
    if (r > 0 && p[r - 1].x < hi) {
      const auto& a = p[r - 1];
      const auto& b = p[r];
      p[r] = {hi, a.d + (b.d - a.d) * (hi - a.x) / (b.x - a.x)};
      ++r;
    }
    p.resize(r);
  }
}

FitResult mesh_fit(const ClassPtr& cls, std::vector<double> t, std::vector<double> v, std::string solver) {
  if (t.empty()) return {zero_function(cls), {std::move(solver)}};
  return {FunctionHandle(cls, MeshRep{std::move(t), std::move(v)}), {std::move(solver)}};
}

}  // namespace

void Dataset::validate() const {
  const Eigen::Index n = y.size();
  if (x.rows() != n) fail(ErrorCode::ShapeMismatch, "x has " + std::to_string(x.rows()) + " rows, y has " + std::to_string(n));
  if (obs && obs->size() != n) fail(ErrorCode::ShapeMismatch, "obs_indicator length differs from n");
  if (fold_id && static_cast<Eigen::Index>(fold_id->size()) != n)
    fail(ErrorCode::ShapeMismatch, "fold_id length differs from n");
}

LossSpec LossSpec::weighted(LossSpec base, Eigen::VectorXd w) {
  LossSpec l;
  l.kind = Kind::Weighted;
  l.clip_M = base.clip_M;
  l.base = std::make_shared<const LossSpec>(std::move(base));
  l.weights = std::move(w);
  return l;
}

LossSpec LossSpec::plug_in(Eigen::VectorXd g) {
  LossSpec l;
  l.kind = Kind::PlugInProduct;
  l.pseudo = std::move(g);
  return l;
}

Eigen::VectorXd pointwise_loss(const LossSpec& loss, const Eigen::VectorXd& f, const Dataset& data) {
  const Eigen::Index n = data.n();
  if (f.size() != n) fail(ErrorCode::ShapeMismatch, "prediction length differs from n");
  switch (loss.kind) {
    case LossSpec::Kind::Squared: return (data.y - f).array().square().matrix();
    case LossSpec::Kind::Logistic: {
      Eigen::VectorXd out(n);
      for (Eigen::Index i = 0; i < n; ++i) out[i] = log1pexp(-data.y[i] * f[i]);
      return out;
    }
    case LossSpec::Kind::Weighted: {
      if (!loss.base) fail(ErrorCode::InvalidArgument, "weighted loss without base");
      if (loss.weights.size() != n) fail(ErrorCode::ShapeMismatch, "loss weights length differs from n");
      return (loss.weights.array() * pointwise_loss(*loss.base, f, data).array()).matrix();
    }
    case LossSpec::Kind::PlugInProduct: {
      if (loss.pseudo.size() != n) fail(ErrorCode::ShapeMismatch, "pseudo-outcome length differs from n");
      const auto& g = loss.pseudo.array();
      const auto fa = f.array();
      return (fa * (-2.0 * g) + fa.square() + g.square()).matrix();
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown loss kind");
}

double empirical_risk(const LossSpec& loss, const FunctionHandle& fh, const Dataset& data) {
  data.validate();
  if (data.n() == 0) fail(ErrorCode::ShapeMismatch, "empty dataset");
  return pointwise_loss(loss, eval(fh, data.x, SupCheck::Ignore), data).mean();
}

std::vector<double> pava(const std::vector<double>& y, const std::vector<double>& w) {
  if (y.size() != w.size()) fail(ErrorCode::ShapeMismatch, "PAVA weights length differs");
  struct Block {
    double v, w;
    std::size_t count;
  };
  std::vector<Block> st;
  st.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    st.push_back({y[i], w[i], 1});
    while (st.size() >= 2 && st[st.size() - 2].v > st.back().v) {
      const Block b = st.back();
      st.pop_back();
      Block& a = st.back();
      const double W = a.w + b.w;
      a.v = W > 0.0 ? (a.w * a.v + b.w * b.v) / W
                    : (a.v * static_cast<double>(a.count) + b.v * static_cast<double>(b.count)) /
                          static_cast<double>(a.count + b.count);
      a.w = W;
      a.count += b.count;
    }
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (const auto& b : st) out.insert(out.end(), b.count, b.v);
  return out;
}

std::vector<double> lipschitz_project(const std::vector<double>& y, const std::vector<double>& w,
                                      const std::vector<double>& gaps, double M) {
  const std::size_t n = y.size();
  if (w.size() != n || (n > 0 && gaps.size() + 1 != n))
    fail(ErrorCode::ShapeMismatch, "Lipschitz projection input lengths differ");
  if (n == 0) return {};

  std::vector<DerivPt> p{{-M, 2.0 * w[0] * (-M - y[0])}, {M, 2.0 * w[0] * (M - y[0])}};
  std::vector<double> mins(n);
  std::vector<DerivPt> next;
  for (std::size_t i = 0;; ++i) {
    std::size_t k = 0;
    const double m = deriv_argmin(p, &k);
    mins[i] = m;
    if (i + 1 == n) break;

    // Inf-convolution with the indicator of [-c, c]: the minimum is widened
    // into a flat stretch and the two sides move apart by c.
    const double c = gaps[i];
    next.clear();
    next.reserve(p.size() + 2);
    for (std::size_t j = 0; j < k; ++j) next.push_back({p[j].x - c, p[j].d});
    next.push_back({m - c, 0.0});
    next.push_back({m + c, 0.0});
    for (std::size_t j = k; j < p.size(); ++j) next.push_back({p[j].x + c, p[j].d});
    p.swap(next);

    const double wi = w[i + 1];
    const double yi = y[i + 1];
    for (auto& q : p) q.d += 2.0 * wi * (q.x - yi);
    deriv_clip(p, -M, M);
  }

  std::vector<double> f(n);
  f[n - 1] = std::clamp(mins[n - 1], -M, M);
  for (std::size_t i = n - 1; i-- > 0;)
    f[i] = std::clamp(std::clamp(mins[i], f[i + 1] - gaps[i], f[i + 1] + gaps[i]), -M, M);
  return f;
}

double linear_weighted_mse(const Dataset& data, const ClassDescriptor& cls, const Eigen::VectorXd& theta,
                           const std::optional<Eigen::VectorXd>& weights) {
  const Eigen::VectorXd r = data.y - feature_matrix(cls, data.x) * theta;
  if (weights) return (weights->array() * r.array().square()).mean();
  return r.squaredNorm() / static_cast<double>(data.n());
}

FitResult fit_least_squares(const Dataset& data, const ClassPtr& cls, const FitOptions& opt) {
  data.validate();
  if (!is_linear_kind(cls->kind)) fail(ErrorCode::UnsupportedClassKind, "least squares needs a linear class");
  const Eigen::VectorXd w = weights_or_ones(opt, data.n());
  const Eigen::VectorXd sw = w.array().sqrt();
  const Eigen::MatrixXd X = sw.asDiagonal() * feature_matrix(*cls, data.x);
  const Eigen::VectorXd yw = sw.asDiagonal() * data.y;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  if (cod.rank() < X.cols() && !opt.allow_rank_deficient)
    fail(ErrorCode::RankDeficient, "design has rank " + std::to_string(cod.rank()) + " < p = " + std::to_string(X.cols()));
  Eigen::VectorXd theta = cod.solve(yw);
  SolverMeta meta{"ols"};
  meta.converged = true;
  return {FunctionHandle(cls, LinearRep{std::move(theta)}), meta};
}

FitResult fit_l1_ball(const Dataset& data, const ClassPtr& cls, const FitOptions& opt) {
  data.validate();
  if (cls->kind != ClassKind::L1Ball && cls->kind != ClassKind::LinearSpan)
    fail(ErrorCode::UnsupportedClassKind, "Frank-Wolfe fitter needs an l1 ball");
  const int p = cls->p();
  const double B = cls->B();
  SolverMeta meta{"frank_wolfe"};
  if (B == 0.0) return {zero_function(cls), meta};

  const Eigen::VectorXd w = weights_or_ones(opt, data.n());
  const Eigen::MatrixXd X = feature_matrix(*cls, data.x);
  const double n = static_cast<double>(data.n());
  const Eigen::MatrixXd Q = X.transpose() * w.asDiagonal() * X / n;
  const Eigen::VectorXd b = X.transpose() * (w.array() * data.y.array()).matrix() / n;

  // Atom 2j is +B e_j, atom 2j+1 is -B e_j.
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(2 * p);
  alpha[0] = alpha[1] = 0.5;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd Qtheta = Eigen::VectorXd::Zero(p);
  auto atom_sign = [](int a) { return (a % 2 == 0) ? 1.0 : -1.0; };

  double gap = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    const Eigen::VectorXd g = 2.0 * (Qtheta - b);
    Eigen::Index jmax = 0;
    g.cwiseAbs().maxCoeff(&jmax);
    const double fw_sign = g[jmax] > 0 ? -1.0 : 1.0;
    const double gtheta = g.dot(theta);
    gap = gtheta + B * std::abs(g[jmax]);
    if (gap <= opt.tol) break;

    int away = -1;
    double away_val = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < 2 * p; ++a) {
      if (alpha[a] <= 0.0) continue;
      const double v = atom_sign(a) * B * g[a / 2];
      if (v > away_val) {
        away_val = v;
        away = a;
      }
    }
    const double away_gap = away_val - gtheta;

    Eigen::VectorXd d, Qd;
    double gmax;
    const bool fw_step = gap >= away_gap;
    if (fw_step) {
      d = -theta;
      d[jmax] += fw_sign * B;
      Qd = fw_sign * B * Q.col(jmax) - Qtheta;
      gmax = 1.0;
    } else {
      d = theta;
      d[away / 2] -= atom_sign(away) * B;
      Qd = Qtheta - atom_sign(away) * B * Q.col(away / 2);
      gmax = alpha[away] / (1.0 - alpha[away]);
    }
    const double curv = d.dot(Qd);
    const double slope = g.dot(d);
    double step = curv > 0.0 ? std::min(gmax, -slope / (2.0 * curv)) : gmax;
    step = std::max(step, 0.0);

    if (fw_step) {
      alpha *= (1.0 - step);
      alpha[2 * jmax + (fw_sign > 0 ? 0 : 1)] += step;
    } else {
      alpha *= (1.0 + step);
      alpha[away] -= step;
      if (step == gmax) alpha[away] = 0.0;
    }
    theta += step * d;
    Qtheta += step * Qd;
  }

  // Rebuild theta from the convex weights so ||theta||_1 <= B holds exactly.
  alpha = alpha.cwiseMax(0.0);
  alpha /= alpha.sum();
  for (int j = 0; j < p; ++j) theta[j] = B * (alpha[2 * j] - alpha[2 * j + 1]);
  const double l1 = theta.lpNorm<1>();
  if (l1 > B) theta *= B / l1;

  meta.iters = it;
  meta.gap = gap;
  meta.converged = gap <= opt.tol;
  return {FunctionHandle(cls, LinearRep{std::move(theta)}), meta};
}

FitResult fit_isotonic(const Dataset& data, const ClassPtr& cls, const FitOptions& opt) {
  data.validate();
  require_kind(*cls, ClassKind::Monotone, "isotonic fitter");
  auto pooled = pool_ties(data, weights_or_ones(opt, data.n()));
  auto v = pava(pooled.y, pooled.w);
  const double M = cls->M();
  for (auto& x : v) x = std::clamp(x, -M, M);
  return mesh_fit(cls, std::move(pooled.t), std::move(v), "pava");
}

FitResult fit_lipschitz(const Dataset& data, const ClassPtr& cls, const FitOptions& opt) {
  data.validate();
  require_kind(*cls, ClassKind::LipschitzMesh, "Lipschitz fitter");
  auto pooled = pool_ties(data, weights_or_ones(opt, data.n()));
  std::vector<double> gaps;
  for (std::size_t k = 0; k + 1 < pooled.t.size(); ++k)
    gaps.push_back(*cls->lipschitz_L * (pooled.t[k + 1] - pooled.t[k]));
  auto v = lipschitz_project(pooled.y, pooled.w, gaps, cls->M());
  return mesh_fit(cls, std::move(pooled.t), std::move(v), "lipschitz_dp");
}

FitResult fit_kernel_ridge(const Dataset& data, const ClassPtr& cls, const KernelRidgeOptions& opt) {
  data.validate();
  require_kind(*cls, ClassKind::RkhsBall, "kernel ridge");
  if (opt.lambda < 0.0) fail(ErrorCode::InvalidArgument, "ridge lambda must be nonnegative");
  const Eigen::Index n = data.n();
  const double beta = *cls->rkhs_decay_beta;
  const Eigen::VectorXd xs = data.x.col(0);
  const Eigen::MatrixXd K = rkhs_gram(beta, xs, xs);
  const double nn = static_cast<double>(n);

  auto solve = [&](double lam) -> Eigen::VectorXd {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += nn * lam;
    if (lam == 0.0) {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
      if (lu.rank() < n) fail(ErrorCode::SingularSystem, "kernel matrix is singular at lambda = 0");
      return lu.solve(data.y);
    }
    return A.ldlt().solve(data.y);
  };
  auto norm2 = [&](const Eigen::VectorXd& a) { return a.dot(K * a); };

  SolverMeta meta{"kernel_ridge"};
  Eigen::VectorXd a;
  if (!opt.ball_mode) {
    a = solve(opt.lambda);
    meta.lambda = opt.lambda;
  } else {
    const double R2 = *cls->rkhs_R * *cls->rkhs_R;
    const double scale = std::max(K.trace() / nn, 1e-300);
    double lo = 1e-12 * scale;
    a = solve(lo);
    meta.lambda = lo;
    if (norm2(a) > R2) {
      double hi = scale;
      while (norm2(solve(hi)) > R2) hi *= 10.0;
      int it = 0;
      for (; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (norm2(solve(mid)) > R2)
          lo = mid;
        else
          hi = mid;
        const double nr = std::sqrt(norm2(solve(hi)));
        if (std::abs(nr - std::sqrt(R2)) <= 1e-6 * std::sqrt(R2)) break;
      }
      a = solve(hi);
      meta.lambda = hi;
      meta.iters = it;
    }
  }
  KernelDualRep rep{a, data.x.col(0)};
  return {FunctionHandle(cls, std::move(rep)), meta};
}

FitResult fit_rkhs_ball(const Dataset& data, const ClassPtr& cls, const FitOptions& opt) {
  data.validate();
  require_kind(*cls, ClassKind::RkhsBall, "RKHS ball fitter");
  const int J = cls->series_terms;
  const double beta = *cls->rkhs_decay_beta;
  const double R = *cls->rkhs_R;
  const Eigen::VectorXd w = weights_or_ones(opt, data.n());
  const double n = static_cast<double>(data.n());

  const Eigen::MatrixXd Phi = rkhs_series_basis(data.x.col(0), J);
  Eigen::VectorXd dm(J);
  for (int j = 0; j < J; ++j) dm[j] = std::pow(j + 1.0, -beta);
  // Work in u = D^(1/2) theta, where ||f||_H = ||u||.
  const Eigen::MatrixXd Phis = Phi * dm.asDiagonal();
  const Eigen::MatrixXd S = Phis.transpose() * w.asDiagonal() * Phis / n;
  const Eigen::VectorXd c = Phis.transpose() * (w.array() * data.y.array()).matrix() / n;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd z = es.eigenvectors().transpose() * c;
  const double thr = 1e-12 * std::max(lam.maxCoeff(), 1e-300);

  auto coords = [&](double mu) {
    Eigen::VectorXd q(J);
    for (int k = 0; k < J; ++k) {
      const double den = lam[k] + mu;
      q[k] = (mu == 0.0 && lam[k] <= thr) ? 0.0 : z[k] / den;
    }
    return q;
  };

  SolverMeta meta{"rkhs_ball"};
  Eigen::VectorXd q = coords(0.0);
  if (q.squaredNorm() > R * R) {
    double lo = 0.0, hi = z.norm() / R;
    int it = 0;
    for (; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (coords(mid).squaredNorm() > R * R)
        lo = mid;
      else
        hi = mid;
    }
    q = coords(hi);
    meta.lambda = hi;
    meta.iters = it;
  }
  const Eigen::VectorXd theta = dm.asDiagonal() * (es.eigenvectors() * q);
  return {FunctionHandle(cls, SeriesRep{theta}), meta};
}

FitResult fit_erm(const Dataset& data, const ClassPtr& cls, const FitOptions& opt) {
  switch (cls->kind) {
    case ClassKind::LinearSpan: return fit_least_squares(data, cls, opt);
    case ClassKind::L1Ball: return fit_l1_ball(data, cls, opt);
    case ClassKind::Monotone: return fit_isotonic(data, cls, opt);
    case ClassKind::LipschitzMesh: return fit_lipschitz(data, cls, opt);
    case ClassKind::RkhsBall: return fit_rkhs_ball(data, cls, opt);
    default: break;
  }
  fail(ErrorCode::UnsupportedClassKind, "no least-squares fitter for " + std::string(to_string(cls->kind)));
}

FitResult fit_weighted_erm(const Dataset& data, const Eigen::VectorXd& weights, const ClassPtr& cls,
                           const FitOptions& opt) {
  if (weights.size() != data.n()) fail(ErrorCode::ShapeMismatch, "weights length differs from n");
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
      fail(ErrorCode::NonPositiveWeight, "weight " + std::to_string(i) + " is " + format_double(weights[i]));
  FitOptions o = opt;
  o.weights = weights;
  return fit_erm(data, cls, o);
}

FitResult fit_tikhonov(const Dataset& data, const ClassPtr& cls, const LossSpec& loss, double lambda,
                       const FitOptions& opt) {
  if (lambda < 0.0) fail(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  data.validate();
  if (loss.kind == LossSpec::Kind::Squared || loss.kind == LossSpec::Kind::Weighted) {
    FitOptions o = opt;
    if (loss.kind == LossSpec::Kind::Weighted) {
      if (!loss.base || loss.base->kind != LossSpec::Kind::Squared)
        fail(ErrorCode::InvalidArgument, "Tikhonov fit supports weighted squared loss only");
      o.weights = loss.weights;
    }
    // sum w (y - f)^2 + (lambda/2) sum w f^2 = (1 + lambda/2) sum w (f - y / (1 + lambda/2))^2 + const
    Dataset shrunk = data;
    shrunk.y = data.y / (1.0 + 0.5 * lambda);
    auto fit = fit_erm(shrunk, cls, o);
    fit.meta.lambda = lambda;
    return fit;
  }
  if (loss.kind == LossSpec::Kind::Logistic) {
    require_kind(*cls, ClassKind::LinearSpan, "logistic Tikhonov fit");
    const Eigen::MatrixXd X = feature_matrix(*cls, data.x);
    const double n = static_cast<double>(data.n());
    const Eigen::MatrixXd G = X.transpose() * X / n;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(X.cols());
    auto objective = [&](const Eigen::VectorXd& t) {
      const Eigen::VectorXd f = X * t;
      double s = 0.0;
      for (Eigen::Index i = 0; i < f.size(); ++i) s += log1pexp(-data.y[i] * f[i]);
      return s / n + 0.5 * lambda * t.dot(G * t);
    };
    SolverMeta meta{"logistic_newton"};
    meta.lambda = lambda;
    meta.converged = false;
    for (int it = 0; it < 200; ++it) {
      const Eigen::VectorXd f = X * theta;
      Eigen::VectorXd r(f.size()), h(f.size());
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        r[i] = -data.y[i] * sigmoid(-data.y[i] * f[i]);
        const double s = sigmoid(f[i]);
        h[i] = s * (1.0 - s);
      }
      const Eigen::VectorXd grad = X.transpose() * r / n + lambda * G * theta;
      meta.iters = it;
      meta.gap = grad.norm();
      if (meta.gap <= 1e-12) {
        meta.converged = true;
        break;
      }
      const Eigen::MatrixXd H = X.transpose() * h.asDiagonal() * X / n + lambda * G;
      const Eigen::VectorXd step = H.completeOrthogonalDecomposition().solve(grad);
      double t = 1.0;
      const double f0 = objective(theta);
      // Newton decrement below roundoff of the objective: no further progress is measurable.
      if (grad.dot(step) <= 1e-15 * std::max(1.0, std::abs(f0))) {
        theta -= step;
        meta.converged = true;
        break;
      }
      while (t > 1e-12 && objective(theta - t * step) > f0 - 0.25 * t * grad.dot(step)) t *= 0.5;
      theta -= t * step;
    }
    return {FunctionHandle(cls, LinearRep{theta}), meta};
  }
  fail(ErrorCode::InvalidArgument, "Tikhonov fit does not support plug-in losses directly");
}

}  // namespace ermlab
