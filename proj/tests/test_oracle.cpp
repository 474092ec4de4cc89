#include <doctest.h>

#include <cmath>
#include <random>

#include "ermlab/oracle.hpp"
#include "test_util.hpp"

using namespace ermlab;
using namespace ermlab::testing;

TEST_CASE("truncated noise variance") {
  TruncatedNoise nz{0.7};
  Rng rng(1);
  double s = 0.0, s2 = 0.0, mx = 0.0;
  const int m = 400000;
  for (int i = 0; i < m; ++i) {
    const double e = nz.draw(rng);
    s += e;
    s2 += e * e;
    mx = std::max(mx, std::abs(e));
  }
  CHECK(mx <= 4.0 * 0.7);
  CHECK(std::abs(s / m) < 5e-3);
  CHECK(s2 / m == doctest::Approx(nz.variance()).epsilon(1e-2));
  CHECK(nz.variance() < 0.49);
  CHECK(TruncatedNoise{0.0}.variance() == 0.0);
}

TEST_CASE("L2 distances against independent quadrature") {
  auto lip = lipschitz(2.0);
  auto rk = rkhs(1.0, 0.5);
  auto hat = basis_span(FeatureBasis::Hat, 7);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = sample_member(lip, s), b = sample_member(lip, s + 10);
    const auto ra = sample_member(rk, s), rb = sample_member(rk, s + 10);
    const auto ha = sample_member(hat, s);
    auto mid = [](const FunctionHandle& f, const FunctionHandle& g) {
      const int m = 100000;
      Eigen::MatrixXd x(m, 1);
      for (int i = 0; i < m; ++i) x(i, 0) = (i + 0.5) / m;
      return (eval(f, x, SupCheck::Ignore) - eval(g, x, SupCheck::Ignore)).squaredNorm() / m;
    };
    CHECK(l2_distance_sq(a, b, Marginal::uniform()).value == doctest::Approx(mid(a, b)).epsilon(1e-6));
    CHECK(l2_distance_sq(ra, rb, Marginal::uniform()).value == doctest::Approx(mid(ra, rb)).epsilon(1e-6));
    CHECK(l2_distance_sq(a, ra, Marginal::uniform()).value == doctest::Approx(mid(a, ra)).epsilon(1e-6));
    CHECK(l2_distance_sq(ha, a, Marginal::uniform()).value == doctest::Approx(mid(ha, a)).epsilon(1e-6));
    CHECK(l2_norm_sq(ha, Marginal::uniform()) == doctest::Approx(mid(ha, zero_function(hat))).epsilon(1e-6));
  }
  auto c2 = linear_span(2, 1.0, 2.0);
  const FunctionHandle f(c2, LinearRep{vec({1.0, -0.5})});
  // E[(x1 - x2/2)^2] on the unit square: 1/3 + 1/12 - 1/4
  CHECK(l2_norm_sq(f, Marginal::uniform()) == doctest::Approx(1.0 / 3 + 1.0 / 12 - 0.25).epsilon(1e-14));
}

TEST_CASE("population risk versus Monte Carlo") {
  const auto sc = make_scenario("lip", lipschitz(2.0), 0.5, 3);
  const auto g = sample_member(sc.cls, 77);
  const Dataset big = draw_data(sc, 400000, 5);
  const double mc = empirical_risk(LossSpec::squared(), g, big);
  const double pr = population_risk(sc, g);
  CHECK(std::abs(mc - pr) < 4.0 * std::sqrt(2.0 * pr * pr / 400000.0) + 1e-3);
  CHECK(regret(sc, sc.f0) == 0.0);
}

TEST_CASE("regret along a segment is quadratic") {
  const auto sc = make_scenario("mono", monotone(1.0), 0.3, 9);
  const auto h = sample_member(sc.cls, 1234);
  const double base = regret(sc, h);
  for (double t : {0.1, 0.5, 0.9}) {
    const auto ft = combine(1.0 - t, sc.f0, t, h);
    CHECK(regret(sc, ft) == doctest::Approx(t * t * base).epsilon(1e-9));
  }
}

TEST_CASE("fluctuation identity and records") {
  const auto sc = make_scenario("lin", linear_span(3, 1.0, 2.0), 0.5, 4);
  const Dataset d = draw_data(sc, 200, 8);
  const auto fit = fit_erm(d, sc.cls);
  const double fl = fluctuation(sc, d, fit.fh);
  const double direct = (empirical_risk(LossSpec::squared(), sc.f0, d) - empirical_risk(LossSpec::squared(), fit.fh, d)) -
                        (population_risk(sc, sc.f0) - population_risk(sc, fit.fh));
  CHECK(fl == doctest::Approx(direct).epsilon(1e-12));
  // Basic inequality for an exact minimizer with f0 in the class.
  CHECK(regret(sc, fit.fh) <= fl + 1e-12);

  const auto rec = make_record(sc, d, fit, 8);
  CHECK(rec.n == 200);
  CHECK(rec.l2_error == doctest::Approx(std::sqrt(rec.regret)).epsilon(1e-9));
  CHECK(record_csv_header() == "n,seed,scenario,emp_risk,pop_risk,regret,l2_error,fluctuation,flags");
  const std::string row = record_csv_row(rec);
  CHECK(row.rfind("200,8,lin,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 8);
}

TEST_CASE("data generation is deterministic") {
  const auto sc = make_scenario("rk", rkhs(), 0.5, 1);
  const Dataset a = draw_data(sc, 50, 2), b = draw_data(sc, 50, 2), c = draw_data(sc, 50, 3);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.x != c.x);
}

TEST_CASE("Bernstein and curvature probes") {
  for (const auto& cls : {linear_span(2, 1.0, 2.0), monotone(1.0), lipschitz(1.0)}) {
    const auto sc = make_scenario("p", cls, 0.5, 6);
    const auto st = probe_conditions(sc, 6, 10, 20000);
    CHECK(st.used > 0);
    // squared loss, well specified: regret equals the squared distance
    CHECK(st.kappa == doctest::Approx(1.0).epsilon(1e-9));
    // loss differences are (f - f0)(f + f0 - 2Y): Lipschitz in f with constant 2(2M + 4 sigma)
    const double Lc = 2.0 * (2.0 * cls->M() + 4.0 * 0.5);
    CHECK(st.lipschitz <= Lc);
    CHECK(st.bernstein <= Lc * Lc / st.kappa * 1.05);
  }
  const auto zero_sc = make_scenario("z", l1_ball(2, 0.0), 0.5, 1);
  CHECK_THROWS_AS(probe_conditions(zero_sc, 3, 1), Error);
}

TEST_CASE("population Tikhonov minimizer") {
  const auto sc = make_scenario("tk", linear_span(3, 1.0, 3.0), 0.5, 2);
  const Eigen::VectorXd th0 = std::get<LinearRep>(sc.f0.rep()).theta;
  const double f0n = l2_norm_sq(sc.f0, sc.marginal);
  for (double lam : {1e-3, 1e-2, 0.1, 1.0}) {
    const auto fl = population_tikhonov_minimizer(sc, lam);
    const double val = regularized_population_risk(sc, fl, lam);
    // perturbations do not improve the regularized risk
    Rng rng(static_cast<std::uint64_t>(lam * 1e6));
    std::normal_distribution<double> g(0.0, 0.01);
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd th = std::get<LinearRep>(fl.rep()).theta;
      for (auto& v : th) v += g(rng);
      CHECK(val <= regularized_population_risk(sc, FunctionHandle(sc.cls, LinearRep{th}), lam) + 1e-15);
    }
    CHECK(val - population_risk(sc, sc.f0) <= lam / 2.0 * f0n + 1e-12);
    CHECK((std::get<LinearRep>(fl.rep()).theta - th0 / (1.0 + lam / 2.0)).norm() < 1e-14);
  }
}
