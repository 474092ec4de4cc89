#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ermlab/complexity.hpp"
#include "test_util.hpp"

using namespace ermlab;
using namespace ermlab::testing;

namespace {

Eigen::MatrixXd uniform_points(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  return sample_points(Marginal::uniform(), d, n, rng);
}

}  // namespace

TEST_CASE("local_sup trivial cases") {
  auto mono = monotone(1.0);
  const Eigen::MatrixXd x = uniform_points(8, 1, 1);
  const Eigen::VectorXd plus = Eigen::VectorXd::Ones(8);
  CHECK(local_sup(*mono, x, plus, 5.0, NormMode::EmpiricalL2) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(local_sup(*mono, x, plus, 5.0, NormMode::PopulationL2) == doctest::Approx(1.0).epsilon(1e-9));

  auto constants = linear_span(1, 1.0, 1.0);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(6, 1);
  const Eigen::VectorXd balanced = vec({1, -1, 1, -1, -1, 1});
  CHECK(std::abs(local_sup(*constants, ones, balanced, 1.0, NormMode::EmpiricalL2)) < 1e-15);

  CHECK_THROWS_AS(local_sup(*holder(1.5), x, plus, 1.0, NormMode::EmpiricalL2), Error);
}

TEST_CASE("local_sup for LinearSpan matches a dense parameter grid") {
  auto c2 = linear_span(2, 1.0, 1.0);
  const Eigen::MatrixXd x = uniform_points(6, 2, 11);
  const Eigen::VectorXd s = vec({1, -1, -1, 1, 1, 1});
  const Eigen::Vector2d g = x.transpose() * s / 6.0;
  for (NormMode mode : {NormMode::PopulationL2, NormMode::EmpiricalL2}) {
    Eigen::Matrix2d S;
    if (mode == NormMode::PopulationL2)
      S << 1.0 / 3, 0.25, 0.25, 1.0 / 3;
    else
      S = x.transpose() * x / 6.0;
    for (double delta : {0.1, 0.5}) {
      // Box that contains the ellipsoid, 1000 x 1000 grid.
      const Eigen::Matrix2d Si = S.inverse();
      const double r0 = delta * std::sqrt(Si(0, 0)), r1 = delta * std::sqrt(Si(1, 1));
      double best = 0.0;
      const int m = 1000;
      for (int a = 0; a <= m; ++a) {
        for (int b = 0; b <= m; ++b) {
          const Eigen::Vector2d th(-r0 + 2.0 * r0 * a / m, -r1 + 2.0 * r1 * b / m);
          if (th.dot(S * th) <= delta * delta) best = std::max(best, g.dot(th));
        }
      }
      const double v = local_sup(*c2, x, s, delta, mode);
      CHECK(v >= best - 1e-12);
      CHECK(std::abs(v - best) < 1e-3);
    }
  }
}

TEST_CASE("local_sup for L1Ball follows the vertex formula") {
  auto ball = l1_ball(4, 1.0, 1.0);
  const Eigen::MatrixXd x = uniform_points(20, 4, 3);
  const Eigen::VectorXd s = rademacher_signs(20, 5, 0);
  for (double delta : {0.05, 0.3, 2.0}) {
    double expect = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double g = std::abs(x.col(j).dot(s)) / 20.0;
      const double cn = x.col(j).norm() / std::sqrt(20.0);
      expect = std::max(expect, std::min(1.0, delta / cn) * g);
    }
    CHECK(local_sup(*ball, x, s, delta, NormMode::EmpiricalL2) == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("monotone and Lipschitz sups against finite-difference feasibility") {
  // Any feasible member gives a lower bound; the solver must dominate samples.
  const Eigen::MatrixXd x = uniform_points(30, 1, 21);
  const Eigen::VectorXd s = rademacher_signs(30, 9, 0);
  for (const auto& c : {monotone(1.0), lipschitz(3.0, 1.0)}) {
    for (double delta : {0.1, 0.4}) {
      const double v = local_sup(*c, x, s, delta, NormMode::EmpiricalL2);
      for (std::uint64_t k = 0; k < 200; ++k) {
        const auto f = sample_member(c, k);
        const Eigen::VectorXd fv = eval(f, x);
        const double nrm = std::sqrt(fv.squaredNorm() / 30.0);
        // scale into the delta ball; both classes are star-shaped around 0
        const double t = nrm > delta ? delta / nrm : 1.0;
        CHECK(t * fv.dot(s) / 30.0 <= v + 1e-9);
      }
      CHECK(local_sup(*c, x, s, delta, NormMode::PopulationL2) >= 0.0);
    }
  }
}

TEST_CASE("exact oracle worked examples") {
  CHECK(exact_rademacher_oracle(Eigen::MatrixXd::Zero(3, 1), 1.0, vec({0.0})) == 0.0);
  CHECK(exact_rademacher_oracle(Eigen::MatrixXd::Ones(1, 1), 1.0, vec({1.0})) == 0.0);
  Eigen::MatrixXd pm(2, 2);
  pm << 1, -1, 1, -1;
  CHECK(exact_rademacher_oracle(pm, 2.0, vec({1.0, 1.0})) == doctest::Approx(0.5));
  CHECK(exact_rademacher_oracle(Eigen::MatrixXd::Ones(1, 1), 1.0, vec({1.0}), true) == doctest::Approx(0.5));
  CHECK_THROWS_AS(exact_rademacher_oracle(Eigen::MatrixXd::Ones(21, 1), 1.0, vec({1.0})), Error);
}

TEST_CASE("Monte Carlo estimates versus the exact oracle") {
  FiniteClass zero{Eigen::MatrixXd::Zero(5, 2), vec({0.0, 0.0}), false};
  const auto z = empirical_local_rademacher(zero, 1.0, 64, 1);
  CHECK(z.estimate == 0.0);
  CHECK(z.stderr_ == 0.0);

  FiniteClass single{Eigen::MatrixXd::Ones(1, 1), vec({1.0}), true};
  const auto sh = empirical_local_rademacher(single, 1.0, 512, 2);
  CHECK(std::abs(sh.estimate - 0.5) <= 3.0 * sh.stderr_);

  int within = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    Rng rng(derive_seed(77, 1, t));
    std::normal_distribution<double> g(0.0, 1.0);
    FiniteClass fc;
    fc.values.resize(10, 8);
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 8; ++j) fc.values(i, j) = g(rng);
    fc.norms = (fc.values.colwise().squaredNorm() / 10.0).cwiseSqrt().transpose();
    fc.star_hull = t % 2 == 1;
    const double delta = 0.8;
    const auto mc = empirical_local_rademacher(fc, delta, 512, t);
    const double exact = exact_rademacher_oracle(fc.values, delta, fc.norms, fc.star_hull);
    if (std::abs(mc.estimate - exact) <= 3.0 * mc.stderr_) ++within;
  }
  CHECK(within >= 99);
}

TEST_CASE("estimates are deterministic across worker counts") {
  auto mono = monotone(1.0);
  const Eigen::MatrixXd x = uniform_points(64, 1, 4);
  const auto a = empirical_local_rademacher(*mono, x, 0.3, 32, 99, NormMode::PopulationL2, 1);
  const auto b = empirical_local_rademacher(*mono, x, 0.3, 32, 99, NormMode::PopulationL2, 4);
  CHECK(a.estimate == b.estimate);
  CHECK(a.stderr_ == b.stderr_);
  CHECK_THROWS_AS(empirical_local_rademacher(*mono, x, 0.3, 1, 99, NormMode::PopulationL2), Error);
}

TEST_CASE("star-shaped scaling of the estimates") {
  const Eigen::MatrixXd x = uniform_points(128, 1, 8);
  for (const auto& c : {monotone(1.0), basis_span(FeatureBasis::Cosine, 8, ClassKind::L1Ball, 1.0, 4.0)}) {
    const auto grid = default_delta_grid(1.0, 8);
    for (double delta : grid) {
      const auto base = empirical_local_rademacher(*c, x, delta, 64, 5, NormMode::EmpiricalL2);
      for (double t : {0.25, 0.5, 0.75}) {
        const auto sc = empirical_local_rademacher(*c, x, t * delta, 64, 5, NormMode::EmpiricalL2);
        CHECK(sc.estimate >= t * base.estimate - 4.0 * (sc.stderr_ + t * base.stderr_));
      }
    }
  }
}

TEST_CASE("complexity curve shape and CSV") {
  auto mono = monotone(1.0);
  const Eigen::MatrixXd x = uniform_points(32, 1, 2);
  const auto grid = default_delta_grid(1.0);
  CHECK(grid.size() == 24);
  CHECK(grid.front() == doctest::Approx(1e-3));
  CHECK(grid.back() == doctest::Approx(2.0));
  const auto curve = complexity_curve(*mono, x, grid, 16, 3, NormMode::EmpiricalL2);
  for (std::size_t k = 1; k < curve.estimates.size(); ++k) CHECK(curve.estimates[k] >= curve.estimates[k - 1]);
  const std::string csv = curve_csv(curve);
  CHECK(csv.rfind("delta,estimate,stderr,n,reps,norm_mode\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 25);

  const auto smooth = make_curve({1, 2, 3}, {0.3, 0.1, 0.5}, {0, 0, 0}, 10, 2, NormMode::EmpiricalL2);
  CHECK(smooth.estimates[0] == doctest::Approx(0.2));
  CHECK(smooth.estimates[1] == doctest::Approx(0.2));
  CHECK(smooth.raw[1] == 0.1);
}

TEST_CASE("RKHS eigenvalue bound") {
  const Eigen::VectorXd one = vec({1.0});
  CHECK(rkhs_local_bound(one, 1.0, 0.0, 4.0) == 0.0);
  CHECK(rkhs_local_bound(one, 1.0, 1.0, 4.0) == doctest::Approx(0.5));

  Eigen::VectorXd lam(200000);
  for (Eigen::Index j = 0; j < lam.size(); ++j) lam[j] = 1.0 / ((j + 1.0) * (j + 1.0));
  std::vector<double> ln, ld;
  for (double n : {1e2, 1e3, 1e4, 1e5, 1e6}) {
    const double dn = solve_complexity_fixed_point(
        [&](double d) { return rkhs_local_bound(lam, 1.0, d, n); }, 1e-8, 10.0);
    CHECK(rkhs_local_bound(lam, 1.0, dn, n) == doctest::Approx(dn * dn).epsilon(1e-6));
    ln.push_back(std::log(n));
    ld.push_back(std::log(dn));
  }
  const double mx = std::accumulate(ln.begin(), ln.end(), 0.0) / 5, my = std::accumulate(ld.begin(), ld.end(), 0.0) / 5;
  double sxy = 0, sxx = 0;
  for (int k = 0; k < 5; ++k) {
    sxy += (ln[k] - mx) * (ld[k] - my);
    sxx += (ln[k] - mx) * (ln[k] - mx);
  }
  CHECK(std::abs(sxy / sxx + 1.0 / 3.0) <= 0.02);
}

TEST_CASE("envelope transforms") {
  const Envelope root = Envelope::power_law(1.0, 0.5);
  const auto same = transform_envelope(root, EnvelopeTransform::lipschitz(1.0));
  for (double d : log_grid(1e-4, 1.0, 9)) CHECK(same(d) == doctest::Approx(root(d)).epsilon(1e-15));
  const auto four = transform_envelope(root, EnvelopeTransform::lipschitz(4.0));
  for (double d : log_grid(1e-4, 1.0, 9)) CHECK(four(d) == doctest::Approx(std::sqrt(d) / 2.0).epsilon(1e-14));
  const auto star = transform_envelope(root, EnvelopeTransform::star_hull(1.0));
  CHECK(star.additive_log_term());
  CHECK(star(0.01) == doctest::Approx(0.1 + 0.01 * std::sqrt(std::log(101.0))).epsilon(1e-14));
  CHECK(star(0.01) == doctest::Approx(0.1215).epsilon(1e-3));
  const auto sum = transform_envelope(root, EnvelopeTransform::sum(Envelope::power_law(2.0, 1.0)));
  CHECK(sum(0.25) == doctest::Approx(0.5 + 0.5).epsilon(1e-15));

  // Scaling an envelope with a log factor keeps it an upper bound of phi(d / L).
  Envelope lg(PowerLogTerm{1.0, 1.0, 0.5, 10.0});
  for (double L : {0.5, 3.0}) {
    const auto t = transform_envelope(lg, EnvelopeTransform::lipschitz(L));
    validate_envelope(t);
    for (double d : log_grid(1e-6, 1.0, 20)) CHECK(t(d) >= lg(d / L) * (1.0 - 1e-12));
  }
}

TEST_CASE("critical radius closed forms and bisection") {
  for (double n : {16.0, 1024.0, 1e6}) {
    CHECK(critical_radius_envelope(Envelope::power_law(1.0, 1.0), n).value ==
          doctest::Approx(1.0 / std::sqrt(n)).epsilon(1e-14));
    CHECK(critical_radius_envelope(Envelope::power_law(1.0, 0.5), n).value ==
          doctest::Approx(std::pow(n, -1.0 / 3.0)).epsilon(1e-14));
    CHECK(critical_radius_envelope(Envelope::power_law(1.0, 0.75), n).value ==
          doctest::Approx(std::pow(n, -2.0 / 5.0)).epsilon(1e-14));
  }

  Rng rng(1234);
  std::uniform_real_distribution<double> uc(0.1, 10.0), ug(0.0, 0.9), un(1.0, 6.0);
  int matched = 0;
  for (int t = 0; t < 100; ++t) {
    const double c = uc(rng), g = ug(rng), n = std::pow(10.0, un(rng));
    const Envelope env = Envelope::power_law(c, g);
    const double closed = std::pow(c / std::sqrt(n), 1.0 / (2.0 - g));
    if (closed >= 1.0) continue;
    const auto cr = critical_radius_envelope(env, n, true);
    CHECK(cr.method == CriticalMethod::EnvelopeFixedPoint);
    CHECK(std::abs(cr.value / closed - 1.0) <= 1e-9);
    if (std::abs(cr.value / closed - 1.0) <= 1e-9) ++matched;
    const double v = cr.value, tol = 1e-6;
    CHECK(env(v) <= std::sqrt(n) * v * v * (1.0 + 1e-12));
    CHECK(std::sqrt(n) * v * v <= env(v * (1.0 + tol)) * (1.0 + tol));
    CHECK(env(v / 2) / (v / 2) >= env(v) / v);
    CHECK(env(v) / v >= env(2 * v) / (2 * v));
  }
  CHECK(matched > 60);

  Envelope mixed(PowerLogTerm{1.0, 0.5, 1.0, std::exp(2.0)});
  mixed.add(StarHullTerm{1.0, 1.0});
  const auto cr = critical_radius_envelope(mixed, 1000.0);
  CHECK(cr.method == CriticalMethod::EnvelopeFixedPoint);
  CHECK(mixed(cr.value) <= std::sqrt(1000.0) * cr.value * cr.value * (1 + 1e-12));
  CHECK_THROWS_AS(critical_radius_envelope(Envelope::power_law(1e9, 0.5), 1.0, true), Error);
}

TEST_CASE("empirical critical radius") {
  const auto grid = log_grid(1e-3, 2.0, 200);
  const std::vector<double> zeros(grid.size(), 0.0);
  const auto z = critical_radius_empirical(make_curve(grid, zeros, zeros, 100, 2, NormMode::EmpiricalL2));
  CHECK(z.value == doctest::Approx(grid.front()));

  const double n = 400.0;
  std::vector<double> lin(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) lin[k] = grid[k] / std::sqrt(n);
  const auto r = critical_radius_empirical(make_curve(grid, lin, zeros, 400, 2, NormMode::EmpiricalL2));
  const double cell = grid[1] / grid[0];
  CHECK(r.value >= 0.05 / cell);
  CHECK(r.value <= 0.05 * cell);
  CHECK(r.method == CriticalMethod::EmpiricalCurve);

  std::vector<double> high(grid.size(), 10.0);
  CHECK_THROWS_AS(critical_radius_empirical(make_curve(grid, high, zeros, 4, 2, NormMode::EmpiricalL2)), Error);
}

TEST_CASE("LinearSpan p=2 critical radius at n=256 versus the VC rate") {
  auto c2 = linear_span(2, 1.0, 1.0);
  const Eigen::MatrixXd x = uniform_points(256, 2, 17);
  const auto curve = complexity_curve(*c2, x, default_delta_grid(1.0, 48), 512, 23, NormMode::PopulationL2);
  const double dn = critical_radius_empirical(curve).value;
  const double V = 4.0, n = 256.0;
  const double vc = std::sqrt(V * std::log(n / V) / n);
  MESSAGE("delta_n = " << dn << ", VC rate = " << vc << ", ratio = " << vc / dn);
  // E sup = delta E sqrt(g' S^-1 g) <= delta sqrt(p / n), so delta_n sits just below sqrt(p / n).
  const double direct = std::sqrt(2.0 / n);
  CHECK(dn <= direct);
  CHECK(dn >= 0.8 * direct);
}
