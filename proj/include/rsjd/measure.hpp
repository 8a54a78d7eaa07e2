#pragma once

// Structure-preserving equivalent martingale measure: per-regime exponential
// tilts combined with a Perron-Frobenius twist of the switching generator.

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "model.hpp"

namespace rsjd {

struct TiltSolution {
  Vector a;    // per-regime tilt exponents
  Vector h;    // Perron-Frobenius right eigenvector of K_a[1], h > 0
  double lam;  // Perron-Frobenius eigenvalue of K_a[1]
};

namespace detail {

// Open interval on which kappa(reg, .) is finite.
inline std::pair<double, double> kappa_strip(const RegimeParams& reg) {
  if (!reg.jumps || reg.lambda == 0.0) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {-inf, inf};
  }
  return reg.jumps->strip();
}

}  // namespace detail

// Root a of kappa(a + 1) = r + kappa(a). The left side minus the right is
// strictly increasing in a (kappa is strictly convex), so bisection on a
// sign-changing bracket is enough.
inline double solve_tilt_exponent(const RegimeParams& reg, int regime_index) {
  const auto [lo, hi] = detail::kappa_strip(reg);
  if (!(hi > 1.0)) {
    throw validation_error("tilt exponent: E[S_1] is infinite in regime " +
                           std::to_string(regime_index) +
                           " (jump MGF diverges at 1)");
  }
  if (!reg.jumps || reg.lambda == 0.0) {
    return (reg.r - reg.mu) / (reg.sigma * reg.sigma) - 0.5;
  }

  const auto phi = [&](double a) {
    return kappa(reg, a + 1.0) - reg.r - kappa(reg, a);
  };
  if (std::abs(phi(0.0)) <= 1e-13) return 0.0;  // already risk-neutral

  // phi -> -inf as a approaches the lower end of (lo, hi-1) and +inf at the
  // upper end, so stepping halfway toward each boundary must cross zero.
  const double guess = std::clamp(
      (reg.r - reg.mu) / (reg.sigma * reg.sigma) - 0.5,
      std::max(lo + 1e-6, -1e6), std::min(hi - 1.0 - 1e-6, 1e6));
  const auto bracket = [&](double from, double boundary, bool want_neg) {
    double x = from;
    for (int it = 0; it < 200; ++it) {
      const double f = phi(x);
      if (want_neg ? (f < 0.0) : (f > 0.0)) return x;
      if (std::isfinite(boundary)) {
        x = 0.5 * (x + boundary);
      } else {
        x = (x == from) ? x + (want_neg ? -1.0 : 1.0)
                        : from + 2.0 * (x - from);
      }
    }
    throw numerical_error("tilt exponent: no sign change in regime " +
                          std::to_string(regime_index));
  };
  double a_lo = bracket(guess, lo, true);
  double a_hi = bracket(guess, hi - 1.0, false);
  for (int it = 0;
       it < 300 && a_hi - a_lo > 1e-15 * (1.0 + std::abs(a_lo) + std::abs(a_hi));
       ++it) {
    const double mid = 0.5 * (a_lo + a_hi);
    (phi(mid) < 0.0 ? a_lo : a_hi) = mid;
  }
  const double a = 0.5 * (a_lo + a_hi);
  if (std::abs(phi(a)) > 1e-10) {
    throw numerical_error("tilt exponent: bisection stalled in regime " +
                          std::to_string(regime_index));
  }
  return a;
}

inline Vector solve_tilt_exponents(const ModelSpec& m) {
  Vector a(m.n_regimes());
  for (int i = 0; i < m.n_regimes(); ++i) {
    a(i) = solve_tilt_exponent(m.regimes[i], i);
  }
  return a;
}

// Perron-Frobenius pair of K_a[1] = G + diag(kappa_i(a_i)) by power iteration
// on the matrix shifted into the nonnegative cone.
inline TiltSolution solve_tilt(const ModelSpec& m) {
  TiltSolution out;
  out.a = solve_tilt_exponents(m);
  const int n = m.n_regimes();
  Matrix k = m.G;
  for (int i = 0; i < n; ++i) k(i, i) += kappa(m.regimes[i], out.a(i));

  const double shift = k.diagonal().cwiseAbs().maxCoeff() + 1.0;
  Matrix s = k + shift * Matrix::Identity(n, n);
  Vector v = Vector::Constant(n, 1.0 / n);
  double rho = 0.0;
  bool converged = false;
  for (int it = 0; it < 100000; ++it) {
    Vector w = s * v;
    rho = w.sum();  // v is sum-normalized and positive throughout
    w /= rho;
    if ((w - v).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, rho)) {
      v = w;
      converged = true;
      break;
    }
    v = w;
  }
  if (!converged) throw numerical_error("Perron iteration did not converge");
  if ((v.array() <= 0.0).any()) {
    throw numerical_error("Perron eigenvector has a nonpositive entry");
  }
  out.h = v / v(0);
  out.lam = rho - shift;
  if ((k * out.h - out.lam * out.h).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, std::abs(out.lam))) {
    throw numerical_error("Perron pair residual too large");
  }
  return out;
}

// Transformed model under the martingale measure: twisted switching
// generator, tilted jump laws and intensities, and drift recovered from the
// martingale restriction sigma^2/2 + mu + lambda (F_hat(1) - 1) = r.
inline ModelSpec to_emm(const ModelSpec& m) {
  m.validate();
  const TiltSolution tilt_sol = solve_tilt(m);
  const int n = m.n_regimes();

  ModelSpec out = m;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      out.G(i, j) = m.G(i, j) * tilt_sol.h(j) / tilt_sol.h(i);
      row += out.G(i, j);
    }
    out.G(i, i) = -row;
  }
  for (int i = 0; i < n; ++i) {
    RegimeParams& reg = out.regimes[i];
    if (reg.jumps && reg.lambda > 0.0) {
      auto [tilted, weight] = tilt(*reg.jumps, tilt_sol.a(i));
      reg.jumps = std::move(tilted);
      reg.lambda = m.regimes[i].lambda * weight;
    }
    reg.mu = risk_neutral_drift(reg);
  }
  out.validate();
  return out;
}

}  // namespace rsjd
