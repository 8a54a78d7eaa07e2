#pragma once

#include <optional>
#include <vector>

#include "phase_type.hpp"

namespace rsjd {

/// One regime of the modulated log-price: dX = mu dt + sigma dW plus compound
/// Poisson jumps at rate lambda with two-sided phase-type sizes; r is the
/// regime's short rate (and the killing rate in the pricing embedding).
struct RegimeParams {
  double r = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double lambda = 0.0;
  std::optional<DoublePhaseType> jumps;
};

/// Regime-switching exponential jump-diffusion: Z is a CTMC with generator G,
/// X evolves with the active regime's parameters, S = e^X.
struct ModelSpec {
  Matrix G;
  std::vector<RegimeParams> regimes;
  double x0 = 0.0;
  int z0 = 0;

  int n_regimes() const { return static_cast<int>(regimes.size()); }

  void validate() const;
};

/// Levy exponent of regime `reg`: kappa(s) = mu s + sigma^2 s^2 / 2 +
/// lambda (E[e^{s J}] - 1), finite on the jump law's convergence strip.
inline double kappa(const RegimeParams& reg, double s) {
  double v = reg.mu * s + 0.5 * reg.sigma * reg.sigma * s * s;
  if (reg.lambda > 0) {
    auto [lo, hi] = reg.jumps->strip();
    if (s <= lo + 1e-9 || s >= hi - 1e-9)
      throw validation_error("kappa: argument outside jump transform strip");
    v += reg.lambda * (reg.jumps->mgf(s) - 1.0);
  }
  return v;
}

inline void ModelSpec::validate() const {
  const int n = n_regimes();
  if (n == 0) throw validation_error("model: no regimes");
  if (G.rows() != n || G.cols() != n)
    throw validation_error("model: G dimension disagrees with regime count");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      if (i != j && G(i, j) < 0)
        throw validation_error("model: negative switching rate");
    if (std::abs(G.row(i).sum()) > 1e-10)
      throw validation_error("model: G row " + std::to_string(i) +
                             " does not sum to zero");
  }
  // Irreducibility via reachability closure on the rate pattern.
  if (n > 1) {
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) reach[i][j] = i == j || G(i, j) > 0;
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          reach[i][j] = reach[i][j] || (reach[i][k] && reach[k][j]);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (!reach[i][j]) throw validation_error("model: G is reducible");
  }
  for (int i = 0; i < n; ++i) {
    const auto& reg = regimes[i];
    if (reg.sigma <= 0)
      throw validation_error("model: regime " + std::to_string(i) +
                             " needs sigma > 0");
    if (reg.r < 0 || reg.lambda < 0)
      throw validation_error("model: negative rate in regime " + std::to_string(i));
    if ((reg.lambda > 0) != reg.jumps.has_value())
      throw validation_error("model: regime " + std::to_string(i) +
                             " jump law must be present iff lambda > 0");
    if (reg.jumps) reg.jumps->validate();
  }
  if (z0 < 0 || z0 >= n) throw validation_error("model: z0 out of range");
}

/// Drift that makes e^{X - int r} a martingale in regime `reg`:
/// mu = r - sigma^2/2 - lambda (E[e^J] - 1). Throws if E[e^J] diverges.
inline double risk_neutral_drift(const RegimeParams& reg) {
  double comp = 0.0;
  if (reg.lambda > 0) {
    if (reg.jumps->strip().second <= 1.0 + 1e-9)
      throw validation_error(
          "risk-neutral drift: upward jump transform diverges at 1");
    comp = reg.lambda * (reg.jumps->mgf(1.0) - 1.0);
  }
  return reg.r - 0.5 * reg.sigma * reg.sigma - comp;
}

/// Per-regime martingale residuals sigma^2/2 + mu + lambda (E[e^J] - 1) - r;
/// all zero iff the discounted stock is a martingale.
inline Vector validate_martingale_condition(const ModelSpec& m) {
  Vector res(m.n_regimes());
  for (int i = 0; i < m.n_regimes(); ++i) {
    const auto& reg = m.regimes[i];
    if (reg.lambda > 0 && reg.jumps->strip().second <= 1.0 + 1e-9)
      throw validation_error("martingale condition: regime " + std::to_string(i) +
                             " has E[e^J] = infinity");
    res(i) = kappa(reg, 1.0) - reg.r;
  }
  return res;
}

inline bool is_risk_neutral(const ModelSpec& m, double tol = 1e-9) {
  return validate_martingale_condition(m).cwiseAbs().maxCoeff() <= tol;
}

/// Characteristic matrix K[s] = G + diag(kappa_i(s)); the spectral object the
/// factorization and measure change are built from.
inline Matrix characteristic_matrix(const ModelSpec& m, double s) {
  Matrix k = m.G;
  for (int i = 0; i < m.n_regimes(); ++i) k(i, i) += kappa(m.regimes[i], s);
  return k;
}

}  // namespace rsjd
