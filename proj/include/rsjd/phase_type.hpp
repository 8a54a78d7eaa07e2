#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "linalg.hpp"

namespace rsjd {

/// Phase-type distribution PH(alpha, T) on (0, inf): the absorption time of a
/// CTMC with sub-generator T started from alpha. A deficit 1 - sum(alpha) is
/// an atom at zero.
struct PhaseType {
  Vector alpha;
  Matrix T;

  Eigen::Index dim() const { return alpha.size(); }

  /// Exit rate vector t = (-T) 1.
  Vector exit_rates() const { return -T.rowwise().sum(); }

  void validate() const {
    if (alpha.size() == 0 || T.rows() != alpha.size() || T.cols() != alpha.size())
      throw validation_error("phase-type: alpha and T dimensions disagree");
    if ((alpha.array() < -1e-14).any())
      throw validation_error("phase-type: alpha has negative entries");
    if (alpha.sum() > 1.0 + 1e-12)
      throw validation_error("phase-type: alpha sums beyond 1");
    for (Eigen::Index i = 0; i < T.rows(); ++i) {
      if (T(i, i) >= 0)
        throw validation_error("phase-type: diagonal of T must be negative");
      for (Eigen::Index j = 0; j < T.cols(); ++j)
        if (i != j && T(i, j) < -1e-14)
          throw validation_error("phase-type: off-diagonal of T must be nonnegative");
      if (T.row(i).sum() > 1e-12)
        throw validation_error("phase-type: T row sums must be <= 0");
    }
    // (-T) must be nonsingular so the distribution is proper.
    if (Eigen::FullPivLU<Matrix>(-T).rank() != T.rows())
      throw validation_error("phase-type: -T is singular (defective distribution)");
  }

  double density(double x) const {
    if (x < 0) return 0.0;
    return alpha.dot(expm(T * x) * exit_rates());
  }

  /// P(X <= x) = 1 - alpha' e^{Tx} 1, including any atom at zero.
  double cdf(double x) const {
    if (x < 0) return 0.0;
    return 1.0 - (alpha.transpose() * expm(T * x)).sum();
  }

  /// Convergence abscissa: E[e^{sX}] is finite for s < abscissa().
  double abscissa() const {
    return -T.eigenvalues().real().maxCoeff();
  }

  /// Laplace transform E[e^{-sX}] = alpha'(sI - T)^{-1} t, s > -abscissa().
  double laplace(double s) const {
    if (s <= -abscissa() + 1e-9)
      throw validation_error("phase-type: Laplace argument outside convergence strip");
    Matrix m = s * Matrix::Identity(dim(), dim()) - T;
    return alpha.dot(m.partialPivLu().solve(exit_rates()));
  }

  /// Moment generating function E[e^{sX}] (atom at zero contributes its mass).
  double mgf(double s) const { return laplace(-s) + (1.0 - alpha.sum()); }

  /// E[X^n] = n! alpha' (-T)^{-n} 1.
  double moment(int n) const {
    Vector v = Vector::Ones(dim());
    double fact = 1.0;
    auto lu = Matrix(-T).partialPivLu();
    for (int k = 1; k <= n; ++k) {
      v = lu.solve(v);
      fact *= k;
    }
    return fact * alpha.dot(v);
  }

  double mean() const { return moment(1); }

  /// Absorption-time simulation of the underlying chain.
  template <class Rng>
  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    // Pick the starting phase; the deficit mass is an atom at zero.
    double u = unif(rng), acc = 0.0;
    Eigen::Index phase = -1;
    for (Eigen::Index i = 0; i < dim(); ++i) {
      acc += alpha(i);
      if (u < acc) { phase = i; break; }
    }
    if (phase < 0) return 0.0;
    const Vector t = exit_rates();
    std::exponential_distribution<double> expo(1.0);
    double time = 0.0;
    while (true) {
      const double rate = -T(phase, phase);
      time += expo(rng) / rate;
      double v = unif(rng) * rate, run = t(phase);
      if (v < run) return time;
      Eigen::Index next = -1;
      for (Eigen::Index j = 0; j < dim(); ++j) {
        if (j == phase) continue;
        run += T(phase, j);
        if (v < run) { next = j; break; }
      }
      // Roundoff in the rate partition: stay put and redraw.
      if (next >= 0) phase = next;
    }
  }
};

/// Exponential tilt by weight e^{gamma x}: density f*(x) = e^{gamma x} f(x) / E[e^{gamma X}].
/// Requires gamma < abscissa(); pass a negative gamma for a downward tilt.
inline PhaseType tilt(const PhaseType& d, double gamma) {
  if (gamma == 0.0) return d;
  if (gamma >= d.abscissa() - 1e-9)
    throw validation_error("phase-type tilt: gamma outside convergence strip");
  const Eigen::Index n = d.dim();
  Matrix m = -gamma * Matrix::Identity(n, n) - d.T;
  Vector k = m.partialPivLu().solve(d.exit_rates());  // per-phase E_i[e^{gamma X}]
  const double norm = d.alpha.dot(k);
  PhaseType out;
  out.alpha = (d.alpha.array() * k.array()).matrix() / norm;
  out.T = k.cwiseInverse().asDiagonal() * d.T * k.asDiagonal() +
          gamma * Matrix::Identity(n, n);
  out.validate();
  return out;
}

/// Two-sided jump distribution: with probability p a positive PH jump, with
/// probability 1-p the negative of an independent PH jump. A one-sided law
/// drops the unused component (p = 0 or 1).
struct DoublePhaseType {
  double p = 1.0;
  std::optional<PhaseType> plus;
  std::optional<PhaseType> minus;

  void validate() const {
    if (!(p >= 0.0 && p <= 1.0))
      throw validation_error("double phase-type: p outside [0,1]");
    if ((p > 0.0) != plus.has_value())
      throw validation_error("double phase-type: plus component must be present iff p > 0");
    if ((p < 1.0) != minus.has_value())
      throw validation_error("double phase-type: minus component must be present iff p < 1");
    if (plus) plus->validate();
    if (minus) minus->validate();
  }

  /// Strip (lo, hi) on which E[e^{sX}] converges.
  std::pair<double, double> strip() const {
    double hi = plus ? plus->abscissa() : std::numeric_limits<double>::infinity();
    double lo = minus ? -minus->abscissa() : -std::numeric_limits<double>::infinity();
    return {lo, hi};
  }

  /// E[e^{sX}] for the signed jump X.
  double mgf(double s) const {
    double v = 0.0;
    if (plus) v += p * plus->mgf(s);
    if (minus) v += (1.0 - p) * minus->mgf(-s);
    return v;
  }

  double density(double x) const {
    if (x >= 0) return plus ? p * plus->density(x) : 0.0;
    return minus ? (1.0 - p) * minus->density(-x) : 0.0;
  }

  double mean() const {
    double v = 0.0;
    if (plus) v += p * plus->mean();
    if (minus) v -= (1.0 - p) * minus->mean();
    return v;
  }

  template <class Rng>
  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < p) return plus->sample(rng);
    return -minus->sample(rng);
  }
};

/// Esscher tilt of the signed jump law by e^{gamma x}: the plus side is tilted
/// up by gamma, the minus side down, and the mixing weight is reweighted by
/// each side's transform. Returns the tilted law and its total weight
/// E[e^{gamma X}] (the jump-intensity multiplier under the new measure).
inline std::pair<DoublePhaseType, double> tilt(const DoublePhaseType& d, double gamma) {
  double wp = d.plus ? d.p * d.plus->mgf(gamma) : 0.0;
  double wm = d.minus ? (1.0 - d.p) * d.minus->mgf(-gamma) : 0.0;
  DoublePhaseType out;
  out.p = wp + wm > 0 ? wp / (wp + wm) : d.p;
  if (d.plus) out.plus = tilt(*d.plus, gamma);
  if (d.minus) out.minus = tilt(*d.minus, -gamma);
  out.validate();
  return {out, wp + wm};
}

}  // namespace rsjd
