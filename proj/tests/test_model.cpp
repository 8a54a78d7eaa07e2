#include <rsjd/model.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "util.hpp"

using rsjd::ModelSpec;
using rsjd::RegimeParams;

namespace {

// The asymmetric two-regime benchmark: regime 1 pure diffusion, regime 2
// diffusion plus downward exponential jumps at rate lambda, mean 1/a.
ModelSpec two_regime(double q1, double q2, double r1, double r2, double s1,
                     double s2, double lam, double a) {
  ModelSpec m;
  m.G.setZero(2, 2);
  m.G << -q1, q1, q2, -q2;
  m.regimes.resize(2);
  m.regimes[0].r = r1;
  m.regimes[0].sigma = s1;
  m.regimes[1].r = r2;
  m.regimes[1].sigma = s2;
  m.regimes[1].lambda = lam;
  rsjd::DoublePhaseType d;
  d.p = 0.0;
  d.minus = rsjd::PhaseType{rsjd::Vector::Constant(1, 1.0),
                            rsjd::Matrix::Constant(1, 1, -a)};
  m.regimes[1].jumps = d;
  m.regimes[0].mu = rsjd::risk_neutral_drift(m.regimes[0]);
  m.regimes[1].mu = rsjd::risk_neutral_drift(m.regimes[1]);
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("model validation rejects malformed generators") {
  testutil::Rng rng(17);
  ModelSpec m = testutil::random_model(rng, 3);
  m.validate();

  ModelSpec bad = m;
  bad.G(0, 0) += 0.5;  // row no longer sums to zero
  CHECK_THROWS_AS(bad.validate(), rsjd::validation_error);

  ModelSpec reducible = m;
  reducible.G.setZero();
  reducible.G(0, 0) = -1.0;
  reducible.G(0, 1) = 1.0;
  reducible.G(1, 1) = -1.0;
  reducible.G(1, 2) = 1.0;
  reducible.G(2, 2) = 0.0;  // absorbing third regime
  CHECK_THROWS_AS(reducible.validate(), rsjd::validation_error);

  ModelSpec flat = m;
  flat.regimes[1].sigma = 0.0;
  CHECK_THROWS_AS(flat.validate(), rsjd::validation_error);

  ModelSpec orphan = m;
  orphan.regimes[0].lambda = 0.5;
  orphan.regimes[0].jumps.reset();
  CHECK_THROWS_AS(orphan.validate(), rsjd::validation_error);
}

TEST_CASE("levy exponent: anchor values and convexity") {
  RegimeParams reg;
  reg.mu = 0.07;
  reg.sigma = 0.4;
  CHECK(rsjd::kappa(reg, 0.0) == 0.0);
  CHECK(rsjd::kappa(reg, 1.3) ==
        Catch::Approx(0.07 * 1.3 + 0.08 * 1.3 * 1.3).epsilon(1e-13));

  testutil::Rng rng(23);
  ModelSpec m = testutil::random_model(rng, 2);
  const auto& rj = m.regimes[0];
  // Strict convexity on the interior of the strip by central differences.
  for (double s : {-0.5, 0.0, 0.4, 0.9}) {
    const double h = 1e-4;
    const double dd = (rsjd::kappa(rj, s + h) - 2.0 * rsjd::kappa(rj, s) +
                       rsjd::kappa(rj, s - h)) / (h * h);
    CHECK(dd > rj.sigma * rj.sigma * 0.99);
  }
}

TEST_CASE("martingale residual reproduces the two-regime arithmetic") {
  const double q1 = 0.4, q2 = 0.6, r1 = 0.05, r2 = 0.08;
  const double s1 = 0.3, s2 = 0.35, lam = 0.5, a = 3.0;
  ModelSpec m = two_regime(q1, q2, r1, r2, s1, s2, lam, a);
  rsjd::Vector res = rsjd::validate_martingale_condition(m);
  CHECK(res.cwiseAbs().maxCoeff() < 1e-13);

  // Perturbing the drift moves the residual linearly.
  m.regimes[1].mu += 0.02;
  res = rsjd::validate_martingale_condition(m);
  CHECK(res(0) == Catch::Approx(0.0).margin(1e-13));
  CHECK(res(1) == Catch::Approx(0.02).epsilon(1e-10));

  // Downward Exp(a) jumps: E[e^J] = a/(a+1); residual arithmetic is exact.
  const double mu2 = m.regimes[1].mu;
  const double expected =
      0.5 * s2 * s2 + mu2 + lam * (a / (a + 1.0) - 1.0) - r2;
  CHECK(res(1) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("martingale residual rejects divergent exponential moments") {
  ModelSpec m;
  m.G = rsjd::Matrix::Zero(1, 1);
  m.regimes.resize(1);
  m.regimes[0].sigma = 0.3;
  m.regimes[0].r = 0.05;
  m.regimes[0].mu = 0.0;
  m.regimes[0].lambda = 0.4;
  rsjd::DoublePhaseType d;
  d.p = 1.0;
  // Upward Exp(0.8) jumps: E[e^J] diverges.
  d.plus = rsjd::PhaseType{rsjd::Vector::Constant(1, 1.0),
                           rsjd::Matrix::Constant(1, 1, -0.8)};
  m.regimes[0].jumps = d;
  m.validate();
  CHECK_THROWS_AS(rsjd::validate_martingale_condition(m), rsjd::validation_error);
  CHECK_THROWS_AS(rsjd::risk_neutral_drift(m.regimes[0]), rsjd::validation_error);
}

TEST_CASE("jump transform agrees with independent quadrature at s = 1") {
  // Guards the sign conventions feeding the martingale residual.
  testutil::Rng rng(29);
  const rsjd::DoublePhaseType d = testutil::random_dph(rng);
  const double hi = d.strip().second;
  const double plus_part = oracle::integrate_tail(
      [&](double x) { return std::exp(x) * d.density(x); }, hi - 1.0);
  const double minus_part = oracle::integrate_tail(
      [&](double x) { return std::exp(-x) * d.density(-x); },
      -d.strip().first + 1.0);
  CHECK(d.mgf(1.0) == Catch::Approx(plus_part + minus_part).margin(1e-9));
}

TEST_CASE("characteristic matrix anchors") {
  testutil::Rng rng(31);
  ModelSpec m = testutil::random_model(rng, 3);
  CHECK(rsjd::characteristic_matrix(m, 0.0).isApprox(m.G, 1e-14));

  // Risk-neutral restriction: (K[1] - diag(r)) 1 = 0.
  rsjd::Matrix k1 = rsjd::characteristic_matrix(m, 1.0);
  for (int i = 0; i < m.n_regimes(); ++i) k1(i, i) -= m.regimes[i].r;
  CHECK((k1.rowwise().sum()).cwiseAbs().maxCoeff() < 1e-12);

  ModelSpec single;
  single.G = rsjd::Matrix::Zero(1, 1);
  single.regimes.resize(1);
  single.regimes[0].sigma = 0.25;
  single.regimes[0].mu = 0.04;
  single.validate();
  const double s = 1.7;
  CHECK(rsjd::characteristic_matrix(single, s)(0, 0) ==
        Catch::Approx(0.04 * s + 0.5 * 0.25 * 0.25 * s * s).epsilon(1e-13));
}
