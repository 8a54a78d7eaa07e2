#include <rsjd/phase_type.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "util.hpp"

using rsjd::DoublePhaseType;
using rsjd::PhaseType;

namespace {

PhaseType exponential(double rate) {
  PhaseType ph;
  ph.alpha = rsjd::Vector::Constant(1, 1.0);
  ph.T = rsjd::Matrix::Constant(1, 1, -rate);
  return ph;
}

PhaseType erlang2(double rate) {
  PhaseType ph;
  ph.alpha = rsjd::Vector::Zero(2);
  ph.alpha(0) = 1.0;
  ph.T.setZero(2, 2);
  ph.T(0, 0) = -rate;
  ph.T(0, 1) = rate;
  ph.T(1, 1) = -rate;
  return ph;
}

}  // namespace

TEST_CASE("phase-type density matches elementary closed forms") {
  const PhaseType e2 = exponential(2.0);
  CHECK(e2.density(0.5) == Catch::Approx(2.0 * std::exp(-1.0)).epsilon(1e-13));
  CHECK(e2.cdf(0.5) == Catch::Approx(1.0 - std::exp(-1.0)).epsilon(1e-13));

  const PhaseType er = erlang2(3.0);
  for (double x : {0.1, 0.7, 2.0})
    CHECK(er.density(x) == Catch::Approx(9.0 * x * std::exp(-3.0 * x)).epsilon(1e-12));
}

TEST_CASE("phase-type density integrates to one and matches the cdf") {
  testutil::Rng rng(1234);
  for (int trial = 0; trial < 4; ++trial) {
    const PhaseType ph = testutil::random_ph(rng, 3);
    const double tail = ph.abscissa();
    const double total =
        oracle::integrate_tail([&](double x) { return ph.density(x); }, tail);
    CHECK(total == Catch::Approx(1.0).margin(1e-9));
    for (double x : {0.3, 1.0, 2.5}) {
      const double mass = oracle::integrate([&](double u) { return ph.density(u); },
                                            0.0, x);
      CHECK(ph.cdf(x) == Catch::Approx(mass).margin(1e-10));
    }
  }
}

TEST_CASE("phase-type transform agrees with quadrature and flags divergence") {
  const PhaseType e2 = exponential(2.0);
  CHECK(e2.mgf(1.0) == Catch::Approx(2.0).epsilon(1e-13));
  CHECK(e2.abscissa() == Catch::Approx(2.0));
  CHECK_THROWS_AS(e2.mgf(2.0), rsjd::validation_error);
  CHECK_THROWS_AS(e2.mgf(2.5), rsjd::validation_error);

  testutil::Rng rng(99);
  const PhaseType ph = testutil::random_ph(rng, 3);
  for (double s : {-1.5, -0.2, 0.4, 0.9 * ph.abscissa()}) {
    const double byq = oracle::integrate_tail(
        [&](double x) { return std::exp(s * x) * ph.density(x); },
        ph.abscissa() - std::max(s, 0.0));
    CHECK(ph.mgf(s) == Catch::Approx(byq).margin(1e-10));
  }
  // Laplace convention: laplace(s) = E[e^{-sX}].
  CHECK(ph.laplace(0.7) == Catch::Approx(ph.mgf(-0.7)).epsilon(1e-13));
}

TEST_CASE("phase-type moments match quadrature") {
  testutil::Rng rng(2718);
  const PhaseType ph = testutil::random_ph(rng, 2);
  const double m1 = oracle::integrate_tail(
      [&](double x) { return x * ph.density(x); }, ph.abscissa());
  const double m2 = oracle::integrate_tail(
      [&](double x) { return x * x * ph.density(x); }, ph.abscissa());
  CHECK(ph.mean() == Catch::Approx(m1).margin(1e-9));
  CHECK(ph.moment(2) == Catch::Approx(m2).margin(1e-8));
}

TEST_CASE("phase-type sampling matches the analytic law") {
  testutil::Rng rng(31337);
  const PhaseType ph = testutil::random_ph(rng, 3);
  const int n = 20000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = ph.sample(rng);
  const double ks =
      oracle::ks_distance(xs, [&](double x) { return ph.cdf(x); });
  CHECK(ks < 0.015);

  double sum = 0.0, sumsq = 0.0;
  for (double x : xs) { sum += x; sumsq += x * x; }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  const double se = std::sqrt(var / n);
  CHECK(std::abs(mean - ph.mean()) < 4.0 * se);
}

TEST_CASE("exponential tilt of an exponential law shifts the rate") {
  const PhaseType e3 = exponential(3.0);
  // Downward tilt by gamma: Exp(lam) -> Exp(lam + gamma).
  const PhaseType down = rsjd::tilt(e3, -1.25);
  CHECK(down.T(0, 0) == Catch::Approx(-4.25).epsilon(1e-13));
  CHECK(down.alpha(0) == Catch::Approx(1.0).epsilon(1e-13));
  // Upward tilt inside the strip: Exp(lam) -> Exp(lam - gamma).
  const PhaseType up = rsjd::tilt(e3, 2.0);
  CHECK(up.T(0, 0) == Catch::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(rsjd::tilt(e3, 3.0), rsjd::validation_error);
}

TEST_CASE("tilt is the density reweighting e^{gamma x} f(x) / E[e^{gamma X}]") {
  testutil::Rng rng(555);
  const PhaseType ph = testutil::random_ph(rng, 3);
  CHECK(rsjd::tilt(ph, 0.0).T.isApprox(ph.T, 1e-14));
  for (double gamma : {0.6 * ph.abscissa(), -0.8}) {
    const PhaseType tl = rsjd::tilt(ph, gamma);
    tl.validate();
    const double norm = ph.mgf(gamma);
    for (int i = 1; i <= 20; ++i) {
      const double x = 0.15 * i;
      CHECK(tl.density(x) ==
            Catch::Approx(std::exp(gamma * x) * ph.density(x) / norm).margin(1e-11));
    }
  }
}

TEST_CASE("double phase-type transform, density and sampling are consistent") {
  testutil::Rng rng(777);
  const DoublePhaseType d = testutil::random_dph(rng);
  const auto [lo, hi] = d.strip();
  for (double s : {0.8 * lo, 0.0, 0.5, 0.8 * hi}) {
    const double plus_part = oracle::integrate_tail(
        [&](double x) { return std::exp(s * x) * d.density(x); }, hi - std::max(s, 0.0));
    const double minus_part = oracle::integrate_tail(
        [&](double x) { return std::exp(-s * x) * d.density(-x); },
        -lo - std::max(-s, 0.0));
    CHECK(d.mgf(s) == Catch::Approx(plus_part + minus_part).margin(1e-9));
  }

  const int n = 20000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = d.sample(rng);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sumsq / n - mean * mean) / n);
  CHECK(std::abs(mean - d.mean()) < 4.0 * se);
}

TEST_CASE("double phase-type tilt reweights both sides coherently") {
  testutil::Rng rng(4242);
  const DoublePhaseType d = testutil::random_dph(rng);
  const double gamma = 0.7;
  const auto [tilted, weight] = rsjd::tilt(d, gamma);
  CHECK(weight == Catch::Approx(d.mgf(gamma)).epsilon(1e-12));
  for (double x : {-1.4, -0.3, 0.5, 1.8}) {
    CHECK(tilted.density(x) ==
          Catch::Approx(std::exp(gamma * x) * d.density(x) / weight).margin(1e-11));
  }
}

TEST_CASE("phase-type validation rejects malformed inputs") {
  PhaseType bad;
  bad.alpha = rsjd::Vector::Constant(1, 1.0);
  bad.T = rsjd::Matrix::Constant(1, 1, 0.5);
  CHECK_THROWS_AS(bad.validate(), rsjd::validation_error);

  PhaseType wrong_dim;
  wrong_dim.alpha = rsjd::Vector::Ones(2);
  wrong_dim.T = rsjd::Matrix::Constant(1, 1, -1.0);
  CHECK_THROWS_AS(wrong_dim.validate(), rsjd::validation_error);

  DoublePhaseType d;
  d.p = 0.5;  // missing both sides
  CHECK_THROWS_AS(d.validate(), rsjd::validation_error);
}
