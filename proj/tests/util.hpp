// Shared helpers for the test suite: seeded random generators for phase-type
// laws and model specs, kept small so every test run is reproducible.
#pragma once

#include <algorithm>
#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

#include <rsjd/model.hpp>
#include <rsjd/phase_type.hpp>

namespace testutil {

using Rng = std::mt19937_64;

inline rsjd::PhaseType random_ph(Rng& rng, int n, double min_abscissa = 1.5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  rsjd::PhaseType ph;
  ph.alpha.resize(n);
  for (int i = 0; i < n; ++i) ph.alpha(i) = 0.1 + u(rng);
  ph.alpha /= ph.alpha.sum();
  ph.T = rsjd::Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j = 0; j < n; ++j)
      if (i != j) {
        ph.T(i, j) = u(rng) < 0.6 ? u(rng) : 0.0;
        off += ph.T(i, j);
      }
    ph.T(i, i) = -(off + 0.5 + 2.0 * u(rng));
  }
  const double a = ph.abscissa();
  if (a < min_abscissa) ph.T *= (min_abscissa * 1.25) / a;
  ph.validate();
  return ph;
}

inline rsjd::DoublePhaseType random_dph(Rng& rng, int max_phases = 3,
                                        double p_override = -1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> phases(1, max_phases);
  rsjd::DoublePhaseType d;
  d.p = p_override >= 0.0 ? p_override : 0.2 + 0.6 * u(rng);
  // Upward jumps need E[e^X] finite with margin; downward only E[e^{-X}].
  if (d.p > 0.0) d.plus = random_ph(rng, phases(rng), 2.2);
  if (d.p < 1.0) d.minus = random_ph(rng, phases(rng), 1.4);
  d.validate();
  return d;
}

// Irreducible switching generator with off-diagonal rates in [0.2, 1.1].
inline rsjd::Matrix random_switching(Rng& rng, int n) {
  std::uniform_real_distribution<double> u(0.2, 1.1);
  rsjd::Matrix g = rsjd::Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      if (i != j) g(i, j) = u(rng);
    g(i, i) = -g.row(i).sum();
  }
  return g;
}

/// Random risk-neutral model: sigma, r, lambda drawn, mu set from the
/// martingale restriction so validate_martingale_condition vanishes.
inline rsjd::ModelSpec random_model(Rng& rng, int n_regimes, int max_phases = 3,
                                    bool with_jumps = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  rsjd::ModelSpec m;
  m.G = n_regimes == 1 ? rsjd::Matrix::Zero(1, 1) : random_switching(rng, n_regimes);
  m.regimes.resize(n_regimes);
  for (auto& reg : m.regimes) {
    reg.sigma = 0.2 + 0.3 * u(rng);
    reg.r = 0.1 + 0.3 * u(rng);
    reg.lambda = with_jumps && u(rng) < 0.8 ? 0.2 + 0.8 * u(rng) : 0.0;
    if (reg.lambda > 0) reg.jumps = random_dph(rng, max_phases);
    reg.mu = rsjd::risk_neutral_drift(reg);
  }
  m.x0 = 0.0;
  m.z0 = 0;
  m.validate();
  return m;
}

// --- independent polynomial oracle ----------------------------------------
// Coefficients are ascending (c[0] + c[1] x + ...). Root finding goes through
// the companion matrix, so it shares no code with the library's spectral
// machinery.

inline std::vector<double> conv(const std::vector<double>& a,
                                const std::vector<double>& b) {
  std::vector<double> c(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

inline double eval_poly(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (size_t k = c.size(); k-- > 0;) v = v * x + c[k];
  return v;
}

inline std::vector<std::complex<double>> poly_roots(std::vector<double> c) {
  while (!c.empty() && std::abs(c.back()) == 0.0) c.pop_back();
  if (c.size() < 2) throw std::runtime_error("poly_roots: degree < 1");
  const int d = static_cast<int>(c.size()) - 1;
  rsjd::Matrix comp = rsjd::Matrix::Zero(d, d);
  for (int i = 1; i < d; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < d; ++i) comp(i, d - 1) = -c[i] / c[d];
  Eigen::EigenSolver<rsjd::Matrix> es(comp, false);
  std::vector<std::complex<double>> roots(d);
  for (int i = 0; i < d; ++i) roots[i] = es.eigenvalues()(i);
  return roots;
}

/// The real roots of a polynomial, sorted ascending; throws if any root has
/// imaginary part above `imag_tol`.
inline std::vector<double> real_poly_roots(const std::vector<double>& c,
                                           double imag_tol = 1e-9) {
  std::vector<double> out;
  for (const auto& z : poly_roots(c)) {
    if (std::abs(z.imag()) > imag_tol * std::max(1.0, std::abs(z.real())))
      throw std::runtime_error("real_poly_roots: complex root encountered");
    out.push_back(z.real());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace testutil
