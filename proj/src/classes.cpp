#include "ermlab/classes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace ermlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// sum_{j>=1} j^(-a), a > 1: partial sum plus an Euler-Maclaurin tail.
double zeta(double a) {
  constexpr int kTerms = 2000;
  double s = 0.0;
  for (int j = kTerms; j >= 1; --j) s += std::pow(j, -a);
  const double N = kTerms;
  s += std::pow(N, 1.0 - a) / (a - 1.0) - 0.5 * std::pow(N, -a);
  return s;
}

// Largest |phi_k(x)| over features and the support; used for l1-type bounds.
double max_single_feature(const ClassDescriptor& cls) {
  switch (cls.basis) {
    case FeatureBasis::Identity: return 1.0;
    case FeatureBasis::Cosine: return cls.p() > 1 ? std::sqrt(2.0) : 1.0;
    case FeatureBasis::Hat: return 1.0;
    case FeatureBasis::Bins: return 1.0;
  }
  return 1.0;
}

void require_mesh_support(const ClassDescriptor& cls) {
  if (cls.dim_d != 1) fail(ErrorCode::UnsupportedClassKind, "mesh classes are evaluated for d = 1 only");
  if (cls.kind == ClassKind::HolderMesh) {
    const double s = *cls.smoothness_s;
    if (s < 1.0 || s > 2.0)
      fail(ErrorCode::UnsupportedClassKind, "Holder mesh members implemented for s in [1, 2]");
  }
}

double mesh_value(const MeshRep& m, double x) {
  const auto& t = m.knots;
  if (t.size() == 1 || x <= t.front()) return m.values.front();
  if (x >= t.back()) return m.values.back();
  const auto it = std::upper_bound(t.begin(), t.end(), x);
  const std::size_t k = static_cast<std::size_t>(it - t.begin()) - 1;
  const double w = (x - t[k]) / (t[k + 1] - t[k]);
  return m.values[k] + w * (m.values[k + 1] - m.values[k]);
}

double bernoulli_poly(int order, double u) {
  switch (order) {
    case 2: return u * u - u + 1.0 / 6.0;
    case 4: return u * u * u * u - 2.0 * u * u * u + u * u - 1.0 / 30.0;
    case 6:
      return std::pow(u, 6) - 3.0 * std::pow(u, 5) + 2.5 * std::pow(u, 4) - 0.5 * u * u + 1.0 / 42.0;
    default: return std::numeric_limits<double>::quiet_NaN();
  }
}

// sum_{j>=1} cos(2 pi j u) / j^(2m), u in [0, 1].
double cosine_series(int m, double u) {
  double fact = 1.0;
  for (int i = 2; i <= 2 * m; ++i) fact *= i;
  const double sign = (m % 2 == 1) ? 1.0 : -1.0;
  return sign * std::pow(2.0 * kPi, 2 * m) * bernoulli_poly(2 * m, u) / (2.0 * fact);
}

// Sup-norm interpolation constant for one-dimensional mesh classes whose
// differences g satisfy |g'| <= b, g' (s-1)-Holder with constant b, |g| <= 2M.
double smooth_mesh_interp(double s, double b, double M) {
  const double k = (s == 1.0) ? b : std::pow(2.0 * s / (s - 1.0), (s - 1.0) / s) * std::pow(b, 1.0 / s);
  const double r = s / (2.0 * s + 1.0);
  const double c = std::max({std::sqrt(8.0) * std::pow(2.0 * M, 1.0 / (2.0 * s + 1.0)),
                             std::pow(4.0 * std::pow(4.0 * b / s, 1.0 / s), r), std::pow(16.0 * k, r)});
  const double e = 1.0 - 1.0 / (2.0 * s);
  return c * std::pow(2.0 * M, 2.0 * r - e);
}

// Shifts and shrinks knot values so they fit inside [-M, M]; shrinking keeps
// slope-type constraints intact.
void fit_into_box(std::vector<double>& v, double M, Rng& rng) {
  auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double range = *hi_it - *lo_it;
  const double scale = range > 1.8 * M ? 1.8 * M / range : 1.0;
  for (auto& x : v) x *= scale;
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  std::uniform_real_distribution<double> shift(-M - lo, M - hi);
  const double d = shift(rng);
  for (auto& x : v) x = std::clamp(x + d, -M, M);
}

std::vector<double> uniform_knots(int count) {
  std::vector<double> t(count);
  for (int k = 0; k < count; ++k) t[k] = static_cast<double>(k) / (count - 1);
  return t;
}

}  // namespace

std::string_view to_string(ClassKind kind) {
  switch (kind) {
    case ClassKind::LinearSpan: return "LinearSpan";
    case ClassKind::L1Ball: return "L1Ball";
    case ClassKind::SparseLinear: return "SparseLinear";
    case ClassKind::Monotone: return "Monotone";
    case ClassKind::LipschitzMesh: return "LipschitzMesh";
    case ClassKind::HolderMesh: return "HolderMesh";
    case ClassKind::RkhsBall: return "RkhsBall";
  }
  return "Unknown";
}

ClassKind class_kind_from_string(std::string_view s) {
  for (auto k : {ClassKind::LinearSpan, ClassKind::L1Ball, ClassKind::SparseLinear, ClassKind::Monotone,
                 ClassKind::LipschitzMesh, ClassKind::HolderMesh, ClassKind::RkhsBall})
    if (to_string(k) == s) return k;
  fail(ErrorCode::UnsupportedClassKind, "unknown class kind '" + std::string(s) + "'");
}

std::string_view to_string(FeatureBasis basis) {
  switch (basis) {
    case FeatureBasis::Identity: return "identity";
    case FeatureBasis::Cosine: return "cosine";
    case FeatureBasis::Hat: return "hat";
    case FeatureBasis::Bins: return "bins";
  }
  return "unknown";
}

FeatureBasis feature_basis_from_string(std::string_view s) {
  if (s == "identity") return FeatureBasis::Identity;
  if (s == "cosine") return FeatureBasis::Cosine;
  if (s == "hat") return FeatureBasis::Hat;
  if (s == "bins") return FeatureBasis::Bins;
  fail(ErrorCode::InvalidArgument, "unknown feature basis '" + std::string(s) + "'");
}

bool is_linear_kind(ClassKind kind) {
  return kind == ClassKind::LinearSpan || kind == ClassKind::L1Ball || kind == ClassKind::SparseLinear;
}

bool is_mesh_kind(ClassKind kind) {
  return kind == ClassKind::Monotone || kind == ClassKind::LipschitzMesh || kind == ClassKind::HolderMesh;
}

ClassPtr make_class(ClassDescriptor spec) {
  auto need = [](bool present, const char* name) {
    if (!present) fail(ErrorCode::MissingField, std::string("field '") + name + "' is required for this kind");
  };
  auto positive = [](auto value, const char* name) {
    if (!(value > 0)) fail(ErrorCode::NonPositiveParameter, std::string(name) + " must be positive");
  };

  positive(spec.dim_d, "dim_d");
  positive(spec.envelope_coeff, "envelope_coeff");
  positive(spec.series_terms, "series_terms");
  need(spec.sup_bound_M.has_value(), "sup_bound_M");
  positive(*spec.sup_bound_M, "sup_bound_M");

  switch (spec.kind) {
    case ClassKind::LinearSpan:
    case ClassKind::L1Ball:
    case ClassKind::SparseLinear: {
      need(spec.ambient_p.has_value(), "ambient_p");
      need(spec.radius_B.has_value(), "radius_B");
      positive(*spec.ambient_p, "ambient_p");
      // A zero-radius l1 ball is the trivial class {0}; keep it expressible.
      if (spec.kind == ClassKind::L1Ball ? *spec.radius_B < 0.0 : !(*spec.radius_B > 0.0))
        fail(ErrorCode::NonPositiveParameter, "radius_B must be positive");
      if (spec.kind == ClassKind::SparseLinear) {
        need(spec.sparsity_s.has_value(), "sparsity_s");
        positive(*spec.sparsity_s, "sparsity_s");
        if (*spec.sparsity_s > *spec.ambient_p)
          fail(ErrorCode::SparsityExceedsAmbient, "sparsity_s exceeds ambient_p");
      }
      if (spec.basis == FeatureBasis::Identity && *spec.ambient_p != spec.dim_d)
        fail(ErrorCode::DimensionMismatch, "identity features need ambient_p == dim_d");
      if (spec.basis != FeatureBasis::Identity && spec.dim_d != 1)
        fail(ErrorCode::DimensionMismatch, "cosine and hat features are one-dimensional");
      if (spec.basis == FeatureBasis::Hat && *spec.ambient_p < 2)
        fail(ErrorCode::InvalidArgument, "hat basis needs at least two knots");
      if (spec.kind != ClassKind::LinearSpan && *spec.radius_B * max_single_feature(spec) > *spec.sup_bound_M)
        fail(ErrorCode::InvalidArgument, "sup_bound_M is smaller than the l1 ball's sup norm");
      break;
    }
    case ClassKind::Monotone:
      if (spec.dim_d != 1) fail(ErrorCode::UnsupportedClassKind, "Monotone is defined on [0, 1]");
      break;
    case ClassKind::LipschitzMesh:
      need(spec.lipschitz_L.has_value(), "lipschitz_L");
      positive(*spec.lipschitz_L, "lipschitz_L");
      if (spec.dim_d >= 2) fail(ErrorCode::InvalidArgument, "Lipschitz envelope needs d < 2");
      break;
    case ClassKind::HolderMesh:
      need(spec.smoothness_s.has_value(), "smoothness_s");
      need(spec.radius_B.has_value(), "radius_B");
      positive(*spec.smoothness_s, "smoothness_s");
      positive(*spec.radius_B, "radius_B");
      if (!(spec.dim_d < 2.0 * *spec.smoothness_s)) fail(ErrorCode::InvalidArgument, "Holder class needs d < 2s");
      break;
    case ClassKind::RkhsBall: {
      need(spec.rkhs_decay_beta.has_value(), "rkhs_decay_beta");
      need(spec.rkhs_R.has_value(), "rkhs_R");
      if (!(*spec.rkhs_decay_beta > 0.5))
        fail(ErrorCode::NonPositiveParameter, "rkhs_decay_beta must exceed 1/2");
      positive(*spec.rkhs_R, "rkhs_R");
      if (spec.dim_d != 1) fail(ErrorCode::UnsupportedClassKind, "RKHS ball implemented on [0, 1]");
      const double sup = std::sqrt(2.0 * zeta(2.0 * *spec.rkhs_decay_beta)) * *spec.rkhs_R;
      if (sup > *spec.sup_bound_M)
        fail(ErrorCode::InvalidArgument, "sup_bound_M is smaller than the RKHS ball's sup norm");
      break;
    }
  }

  spec.envelope = entropy_envelope(spec, EntropyNorm::UniformL2);
  return std::make_shared<const ClassDescriptor>(std::move(spec));
}

Envelope entropy_envelope(const ClassDescriptor& cls, EntropyNorm norm) {
  const double c = cls.envelope_coeff;
  const bool smooth = cls.kind == ClassKind::HolderMesh || cls.kind == ClassKind::LipschitzMesh ||
                      cls.kind == ClassKind::RkhsBall;
  if (norm == EntropyNorm::SupNorm && !smooth)
    fail(ErrorCode::UnsupportedNormModeForClass, "sup-norm entropy only for Holder, Lipschitz, RKHS classes");

  switch (cls.kind) {
    case ClassKind::LinearSpan:
    case ClassKind::L1Ball: {
      // log(e / delta) rather than log(1 / delta) keeps the envelope
      // nondecreasing all the way to delta = 1.
      const double v = vc_dimension(cls);
      return Envelope(PowerLogTerm{c * std::sqrt(v), 1.0, 0.5, std::exp(1.0)});
    }
    case ClassKind::SparseLinear: {
      const double s = *cls.sparsity_s;
      return Envelope(PowerLogTerm{c * std::sqrt(s), 1.0, 0.5, std::exp(1.0) * cls.p() / s});
    }
    case ClassKind::Monotone: return Envelope::power_law(c, 0.5);
    case ClassKind::LipschitzMesh: return Envelope::power_law(c, 1.0 - cls.dim_d / 2.0);
    case ClassKind::HolderMesh: return Envelope::power_law(c, 1.0 - cls.dim_d / (2.0 * *cls.smoothness_s));
    case ClassKind::RkhsBall: return Envelope::power_law(c, 1.0 - 1.0 / (2.0 * *cls.rkhs_decay_beta));
  }
  fail(ErrorCode::UnsupportedClassKind, "no envelope for class kind");
}

int vc_dimension(const ClassDescriptor& cls) {
  if (!is_linear_kind(cls.kind)) fail(ErrorCode::UnsupportedClassKind, "VC dimension only for linear kinds");
  return cls.p() + 2;
}

FunctionHandle::FunctionHandle(ClassPtr cls, Representation rep) : cls_(std::move(cls)), rep_(std::move(rep)) {
  if (!cls_) fail(ErrorCode::InvalidArgument, "function handle without class");
  if (const auto* m = std::get_if<MeshRep>(&rep_)) {
    if (m->knots.empty() || m->knots.size() != m->values.size())
      fail(ErrorCode::ShapeMismatch, "mesh knots and values differ in length");
    if (!std::is_sorted(m->knots.begin(), m->knots.end()) ||
        std::adjacent_find(m->knots.begin(), m->knots.end()) != m->knots.end())
      fail(ErrorCode::InvalidArgument, "mesh knots must be strictly increasing");
  }
  if (const auto* l = std::get_if<LinearRep>(&rep_)) {
    if (l->theta.size() != cls_->p()) fail(ErrorCode::ShapeMismatch, "theta length differs from ambient_p");
  }
}

FunctionHandle zero_function(const ClassPtr& cls) {
  if (is_linear_kind(cls->kind)) return {cls, LinearRep{Eigen::VectorXd::Zero(cls->p())}};
  if (is_mesh_kind(cls->kind)) return {cls, MeshRep{{0.0}, {0.0}}};
  return {cls, SeriesRep{Eigen::VectorXd::Zero(1)}};
}

Eigen::VectorXd eval(const FunctionHandle& fh, const Eigen::MatrixXd& points, SupCheck check) {
  const auto& cls = fh.cls();
  if (points.cols() != cls.dim_d)
    fail(ErrorCode::DimensionMismatch, "points have " + std::to_string(points.cols()) + " columns, class has d = " +
                                           std::to_string(cls.dim_d));
  const Eigen::Index n = points.rows();
  Eigen::VectorXd out = std::visit(
      overloaded{
          [&](const LinearRep& r) -> Eigen::VectorXd {
            if (cls.basis == FeatureBasis::Bins) {
              Eigen::VectorXd v(points.rows());
              for (Eigen::Index i = 0; i < points.rows(); ++i) v[i] = r.theta[bin_index(points(i, 0), cls.p())];
              return v;
            }
            return feature_matrix(cls, points) * r.theta;
          },
          [&](const MeshRep& r) -> Eigen::VectorXd {
            Eigen::VectorXd v(n);
            for (Eigen::Index i = 0; i < n; ++i) v[i] = mesh_value(r, points(i, 0));
            return v;
          },
          [&](const SeriesRep& r) -> Eigen::VectorXd {
            return rkhs_series_basis(points.col(0), static_cast<int>(r.theta.size())) * r.theta;
          },
          [&](const KernelDualRep& r) -> Eigen::VectorXd {
            return rkhs_gram(*cls.rkhs_decay_beta, points.col(0), r.anchors.col(0)) * r.coeffs;
          },
      },
      fh.rep());
  if (check == SupCheck::Enforce) {
    const double M = cls.M();
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(out[i]) > M * (1.0 + 1e-12))
        fail(ErrorCode::SupBoundViolated, "value " + format_double(out[i]) + " exceeds M = " + format_double(M));
  }
  return out;
}

FunctionHandle combine(double a, const FunctionHandle& f, double b, const FunctionHandle& g) {
  return std::visit(
      overloaded{
          [&](const LinearRep& rf, const LinearRep& rg) -> FunctionHandle {
            return {f.class_ptr(), LinearRep{a * rf.theta + b * rg.theta}};
          },
          [&](const SeriesRep& rf, const SeriesRep& rg) -> FunctionHandle {
            const Eigen::Index J = std::max(rf.theta.size(), rg.theta.size());
            Eigen::VectorXd t = Eigen::VectorXd::Zero(J);
            t.head(rf.theta.size()) += a * rf.theta;
            t.head(rg.theta.size()) += b * rg.theta;
            return {f.class_ptr(), SeriesRep{t}};
          },
          [&](const MeshRep& rf, const MeshRep& rg) -> FunctionHandle {
            std::vector<double> knots;
            std::merge(rf.knots.begin(), rf.knots.end(), rg.knots.begin(), rg.knots.end(),
                       std::back_inserter(knots));
            knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
            std::vector<double> values(knots.size());
            for (std::size_t k = 0; k < knots.size(); ++k)
              values[k] = a * mesh_value(rf, knots[k]) + b * mesh_value(rg, knots[k]);
            return {f.class_ptr(), MeshRep{std::move(knots), std::move(values)}};
          },
          [&](const KernelDualRep& rf, const KernelDualRep& rg) -> FunctionHandle {
            KernelDualRep out;
            out.coeffs.resize(rf.coeffs.size() + rg.coeffs.size());
            out.coeffs << a * rf.coeffs, b * rg.coeffs;
            out.anchors.resize(rf.anchors.rows() + rg.anchors.rows(), rf.anchors.cols());
            out.anchors << rf.anchors, rg.anchors;
            return {f.class_ptr(), std::move(out)};
          },
          [&](const auto&, const auto&) -> FunctionHandle {
            fail(ErrorCode::InvalidArgument, "cannot combine handles with different representations");
          },
      },
      f.rep(), g.rep());
}

bool satisfies_constraint(const FunctionHandle& fh, double tol) {
  const auto& cls = fh.cls();
  const double M = cls.M();
  if (const auto* r = std::get_if<LinearRep>(&fh.rep())) {
    if (cls.kind == ClassKind::LinearSpan) return true;
    if (r->theta.lpNorm<1>() > cls.B() + tol) return false;
    if (cls.kind == ClassKind::SparseLinear) return (r->theta.array() != 0.0).count() <= *cls.sparsity_s;
    return true;
  }
  if (const auto* r = std::get_if<MeshRep>(&fh.rep())) {
    const auto& t = r->knots;
    const auto& v = r->values;
    for (double x : v)
      if (std::abs(x) > M + tol) return false;
    if (cls.kind == ClassKind::Monotone) {
      for (std::size_t k = 0; k + 1 < v.size(); ++k)
        if (v[k + 1] < v[k] - tol) return false;
      return true;
    }
    std::vector<double> slope(t.size() > 1 ? t.size() - 1 : 0), mid(slope.size());
    for (std::size_t k = 0; k < slope.size(); ++k) {
      slope[k] = (v[k + 1] - v[k]) / (t[k + 1] - t[k]);
      mid[k] = 0.5 * (t[k] + t[k + 1]);
    }
    if (cls.kind == ClassKind::LipschitzMesh) {
      for (double s : slope)
        if (std::abs(s) > *cls.lipschitz_L + tol) return false;
      return true;
    }
    if (cls.kind == ClassKind::HolderMesh) {
      const double half_b = 0.5 * cls.B();
      const double alpha = *cls.smoothness_s - 1.0;
      for (std::size_t j = 0; j < slope.size(); ++j) {
        if (std::abs(slope[j]) > half_b + tol) return false;
        for (std::size_t k = j + 1; k < slope.size(); ++k)
          if (std::abs(slope[k] - slope[j]) > half_b * std::pow(mid[k] - mid[j], alpha) + tol) return false;
      }
      return true;
    }
    return false;
  }
  if (cls.kind == ClassKind::RkhsBall) {
    const double R = *cls.rkhs_R;
    return rkhs_norm_squared(fh) <= R * R * (1.0 + tol) + tol;
  }
  return false;
}

int bin_index(double x, int bins) {
  return std::clamp(static_cast<int>(std::floor(x * bins)), 0, bins - 1);
}

Eigen::MatrixXd feature_matrix(const ClassDescriptor& cls, const Eigen::MatrixXd& x) {
  if (!is_linear_kind(cls.kind)) fail(ErrorCode::UnsupportedClassKind, "features only for linear kinds");
  const int p = cls.p();
  const Eigen::Index n = x.rows();
  switch (cls.basis) {
    case FeatureBasis::Identity: return x;
    case FeatureBasis::Cosine: {
      Eigen::MatrixXd phi(n, p);
      for (Eigen::Index i = 0; i < n; ++i) {
        phi(i, 0) = 1.0;
        for (int k = 1; k < p; ++k) phi(i, k) = std::sqrt(2.0) * std::cos(kPi * k * x(i, 0));
      }
      return phi;
    }
    case FeatureBasis::Hat: {
      const double h = 1.0 / (p - 1);
      Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, p);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = std::clamp(x(i, 0), 0.0, 1.0) / h;
        const int k = std::min(static_cast<int>(u), p - 2);
        const double w = u - k;
        phi(i, k) = 1.0 - w;
        phi(i, k + 1) = w;
      }
      return phi;
    }
    case FeatureBasis::Bins: {
      Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, p);
      for (Eigen::Index i = 0; i < n; ++i) phi(i, bin_index(x(i, 0), p)) = 1.0;
      return phi;
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown feature basis");
}

Eigen::MatrixXd feature_second_moment(const ClassDescriptor& cls, const Marginal& marginal) {
  const int p = cls.p();
  if (cls.basis == FeatureBasis::Identity) {
    if (marginal.kind == Marginal::Kind::Gaussian) {
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
      for (int j = 0; j < p; ++j) {
        const double sd = j < static_cast<int>(marginal.scales.size()) ? marginal.scales[j] : 1.0;
        s(j, j) = sd * sd;
      }
      return s;
    }
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(p, p, 0.25);
    s.diagonal().setConstant(1.0 / 3.0);
    return s;
  }
  if (marginal.kind != Marginal::Kind::UniformCube)
    fail(ErrorCode::InvalidArgument, "basis features assume a uniform marginal");
  if (cls.basis == FeatureBasis::Cosine) return Eigen::MatrixXd::Identity(p, p);
  if (cls.basis == FeatureBasis::Bins) return Eigen::MatrixXd::Identity(p, p) / p;
  const double h = 1.0 / (p - 1);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  for (int k = 0; k < p; ++k) {
    s(k, k) = (k == 0 || k == p - 1) ? h / 3.0 : 2.0 * h / 3.0;
    if (k + 1 < p) s(k, k + 1) = s(k + 1, k) = h / 6.0;
  }
  return s;
}

double sup_feature_norm(const ClassDescriptor& cls, const Marginal& marginal) {
  if (marginal.kind == Marginal::Kind::Gaussian) return std::numeric_limits<double>::infinity();
  switch (cls.basis) {
    case FeatureBasis::Identity: return std::sqrt(static_cast<double>(cls.p()));
    case FeatureBasis::Cosine: return std::sqrt(2.0 * cls.p() - 1.0);
    case FeatureBasis::Hat: return 1.0;
    case FeatureBasis::Bins: return 1.0;
  }
  return std::numeric_limits<double>::infinity();
}

Eigen::VectorXd rkhs_eigenvalues(double beta, int count) {
  Eigen::VectorXd lam(count);
  for (int j = 0; j < count; ++j) lam[j] = std::pow(j + 1.0, -2.0 * beta);
  return lam;
}

int rkhs_truncation(double beta) {
  // (J + 1)^(-2 beta) < 1e-10  <=>  J + 1 > 10^(5 / beta)
  const double bound = std::pow(10.0, 5.0 / beta);
  int J = static_cast<int>(std::floor(bound));
  while (std::pow(J + 1.0, -2.0 * beta) >= 1e-10) ++J;
  while (J > 1 && std::pow(static_cast<double>(J), -2.0 * beta) < 1e-10) --J;
  return J;
}

Eigen::MatrixXd rkhs_series_basis(const Eigen::VectorXd& x, int terms) {
  // Chebyshev recurrence cos((j+1) a) = 2 cos(a) cos(j a) - cos((j-1) a).
  Eigen::MatrixXd phi(x.size(), terms);
  const double r2 = std::sqrt(2.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double c1 = std::cos(kPi * x[i]);
    double prev = 1.0, cur = c1;
    for (int j = 0; j < terms; ++j) {
      phi(i, j) = r2 * cur;
      const double next = 2.0 * c1 * cur - prev;
      prev = cur;
      cur = next;
    }
  }
  return phi;
}

double rkhs_kernel(double beta, double x, double xp) {
  const double m = std::round(beta);
  if (std::abs(beta - m) < 1e-14 && m >= 1 && m <= 3) {
    // 2 cos(a) cos(b) = cos(a - b) + cos(a + b), then the Bernoulli closed form.
    const int mi = static_cast<int>(m);
    const double u1 = std::abs(x - xp) / 2.0;
    double u2 = std::fmod((x + xp) / 2.0, 1.0);
    if (u2 < 0) u2 += 1.0;
    return cosine_series(mi, u1) + cosine_series(mi, u2);
  }
  const int J = rkhs_truncation(beta);
  double s = 0.0;
  for (int j = J; j >= 1; --j) s += std::pow(j, -2.0 * beta) * 2.0 * std::cos(kPi * j * x) * std::cos(kPi * j * xp);
  return s;
}

Eigen::MatrixXd rkhs_gram(double beta, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::MatrixXd k(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j) k(i, j) = rkhs_kernel(beta, a[i], b[j]);
  return k;
}

double rkhs_norm_squared(const FunctionHandle& fh) {
  const double beta = *fh.cls().rkhs_decay_beta;
  if (const auto* r = std::get_if<SeriesRep>(&fh.rep())) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < r->theta.size(); ++j)
      s += r->theta[j] * r->theta[j] * std::pow(j + 1.0, 2.0 * beta);
    return s;
  }
  if (const auto* r = std::get_if<KernelDualRep>(&fh.rep())) {
    const Eigen::VectorXd a = r->anchors.col(0);
    return r->coeffs.dot(rkhs_gram(beta, a, a) * r->coeffs);
  }
  fail(ErrorCode::InvalidArgument, "RKHS norm needs a series or kernel-dual handle");
}

InterpConstants interp_constants(const ClassDescriptor& cls, const Marginal& marginal) {
  const double M = cls.M();
  const InterpConstants fallback{2.0 * M, 0.5, true};
  switch (cls.kind) {
    case ClassKind::LinearSpan:
    case ClassKind::L1Ball:
    case ClassKind::SparseLinear: {
      const double sup_phi = sup_feature_norm(cls, marginal);
      if (!std::isfinite(sup_phi)) return fallback;
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(feature_second_moment(cls, marginal));
      const double lam_min = es.eigenvalues().minCoeff();
      if (!(lam_min > 0.0)) return fallback;
      // ||g||_inf <= sup|phi| ||theta|| <= sup|phi| / sqrt(lam_min) ||g||, and ||g|| <= 2M.
      const double c_lin = sup_phi / std::sqrt(lam_min);
      return {c_lin * std::pow(2.0 * M, 1.0 / (2.0 * kLinearBetaCap)), kLinearBetaCap, false};
    }
    case ClassKind::Monotone: return fallback;
    case ClassKind::LipschitzMesh:
      if (cls.dim_d != 1 || marginal.kind != Marginal::Kind::UniformCube) return fallback;
      return {smooth_mesh_interp(1.0, 2.0 * *cls.lipschitz_L, M), 1.0, false};
    case ClassKind::HolderMesh: {
      const double s = *cls.smoothness_s;
      if (cls.dim_d != 1 || s < 1.0 || s > 2.0 || marginal.kind != Marginal::Kind::UniformCube) return fallback;
      return {smooth_mesh_interp(s, cls.B(), M), s, false};
    }
    case ClassKind::RkhsBall: {
      const double beta = *cls.rkhs_decay_beta;
      const double R = *cls.rkhs_R;
      const double c = std::sqrt(2.0 * beta - 1.0);
      const double head = (std::sqrt(2.0) + 1.0) * std::pow(2.0 * R / c, 1.0 / (2.0 * beta));
      const double low = 2.0 * std::pow(2.0 * R, 1.0 / (2.0 * beta));
      return {std::sqrt(2.0) * std::max(head, low), beta, false};
    }
  }
  return fallback;
}

FunctionHandle sample_member(const ClassPtr& cls_ptr, std::uint64_t seed) {
  const auto& cls = *cls_ptr;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  const double M = cls.M();

  auto l1_uniform = [&](int dim, double radius) {
    // Normalized exponentials with one slack coordinate: uniform in the simplex.
    Eigen::VectorXd e(dim);
    double total = expo(rng);
    for (int j = 0; j < dim; ++j) total += (e[j] = expo(rng));
    for (int j = 0; j < dim; ++j) e[j] *= radius / total * (unif(rng) < 0.5 ? -1.0 : 1.0);
    return e;
  };

  switch (cls.kind) {
    case ClassKind::LinearSpan: {
      const int p = cls.p();
      const double sup_phi = sup_feature_norm(cls, Marginal::uniform());
      const double r_max = std::min(cls.B(), M / sup_phi);
      Eigen::VectorXd dir(p);
      for (int j = 0; j < p; ++j) dir[j] = normal(rng);
      dir /= dir.norm();
      return {cls_ptr, LinearRep{dir * r_max * std::pow(unif(rng), 1.0 / p)}};
    }
    case ClassKind::L1Ball: return {cls_ptr, LinearRep{l1_uniform(cls.p(), cls.B())}};
    case ClassKind::SparseLinear: {
      const int p = cls.p();
      const int s = *cls.sparsity_s;
      std::vector<int> idx(p);
      std::iota(idx.begin(), idx.end(), 0);
      for (int j = 0; j < s; ++j) {
        std::uniform_int_distribution<int> pick(j, p - 1);
        std::swap(idx[j], idx[pick(rng)]);
      }
      const Eigen::VectorXd sub = l1_uniform(s, cls.B());
      Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
      for (int j = 0; j < s; ++j) theta[idx[j]] = sub[j];
      return {cls_ptr, LinearRep{theta}};
    }
    case ClassKind::Monotone: {
      constexpr int G = 17;
      double lo = -M + 2.0 * M * unif(rng);
      double hi = -M + 2.0 * M * unif(rng);
      if (lo > hi) std::swap(lo, hi);
      std::vector<double> inc(G - 1);
      double total = 0.0;
      for (auto& v : inc) total += (v = expo(rng));
      std::vector<double> values(G);
      values[0] = lo;
      double acc = 0.0;
      for (int k = 1; k < G; ++k) {
        acc += inc[k - 1] / total;
        values[k] = std::min(hi, lo + (hi - lo) * acc);
      }
      return {cls_ptr, MeshRep{uniform_knots(G), std::move(values)}};
    }
    case ClassKind::LipschitzMesh: {
      require_mesh_support(cls);
      constexpr int G = 33;
      const double L = *cls.lipschitz_L;
      const double h = 1.0 / (G - 1);
      std::vector<double> values(G, 0.0);
      double z = normal(rng);
      for (int k = 1; k < G; ++k) {
        values[k] = values[k - 1] + h * L * std::tanh(z);
        z += 0.5 * normal(rng);
      }
      fit_into_box(values, M, rng);
      return {cls_ptr, MeshRep{uniform_knots(G), std::move(values)}};
    }
    case ClassKind::HolderMesh: {
      require_mesh_support(cls);
      constexpr int G = 65;
      constexpr int kWaves = 4;
      // f' = (B/2) sum_k w_k cos(omega_k x + phase_k) with sum |w_k| max(1, omega_k) <= 1,
      // so |f'| <= B/2 and f' is (B/2)-Lipschitz, hence (s-1)-Holder on [0, 1].
      double w[kWaves], om[kWaves], ph[kWaves];
      double norm = 0.0;
      for (int k = 0; k < kWaves; ++k) {
        w[k] = expo(rng) * (unif(rng) < 0.5 ? -1.0 : 1.0);
        om[k] = 0.5 + 5.5 * unif(rng);
        ph[k] = 2.0 * kPi * unif(rng);
        norm += std::abs(w[k]) * std::max(1.0, om[k]);
      }
      const double half_b = 0.5 * cls.B();
      const auto knots = uniform_knots(G);
      std::vector<double> values(G);
      for (int i = 0; i < G; ++i) {
        double v = 0.0;
        for (int k = 0; k < kWaves; ++k) v += w[k] / norm * (std::sin(om[k] * knots[i] + ph[k]) - std::sin(ph[k])) / om[k];
        values[i] = half_b * v;
      }
      fit_into_box(values, M, rng);
      return {cls_ptr, MeshRep{knots, std::move(values)}};
    }
    case ClassKind::RkhsBall: {
      const int J = std::min(cls.series_terms, 64);
      const double beta = *cls.rkhs_decay_beta;
      Eigen::VectorXd theta(J);
      double nrm2 = 0.0;
      for (int j = 0; j < J; ++j) {
        theta[j] = normal(rng) * std::pow(j + 1.0, -beta);
        nrm2 += theta[j] * theta[j] * std::pow(j + 1.0, 2.0 * beta);
      }
      theta *= *cls.rkhs_R * unif(rng) / std::sqrt(nrm2);
      return {cls_ptr, SeriesRep{theta}};
    }
  }
  fail(ErrorCode::UnsupportedClassKind, "cannot sample this class");
}

Eigen::MatrixXd sample_points(const Marginal& marginal, int dim, int n, Rng& rng) {
  Eigen::MatrixXd x(n, dim);
  if (marginal.kind == Marginal::Kind::UniformCube) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j) x(i, j) = u(rng);
  } else {
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j)
        x(i, j) = g(rng) * (j < static_cast<int>(marginal.scales.size()) ? marginal.scales[j] : 1.0);
  }
  return x;
}

}  // namespace ermlab
