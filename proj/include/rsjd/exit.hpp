// Exit operators for the fluid embedding: two-sided exit from an interval
// [k, l], the killed-functional kernel, one-sided passage operators, and
// Gerber-Shiu penalty functionals.
//
// Everything is assembled from a Wiener-Hopf factorization. With
// delta = l - k and the embedded states ordered [E+ | E0 | E-]:
//
//   Z+ = (rows E0 u E- of W+ exp(Q+ delta))          (N0- x N0+)
//   Z- = (rows E+ u E0 of W- exp(Q- delta))          (N0+ x N0-)
//   Psi+(x)  = (W+ e^{Q+(l-x)} - W- e^{Q-(x-k)} Z+) (I - Z- Z+)^{-1}
//   Psi-(x)  = (W- e^{Q-(x-k)} - W+ e^{Q+(l-x)} Z-) (I - Z+ Z-)^{-1}
//   Psi0(b,x) = (e^{bx} I - e^{bl} Psi+(x) J+ - e^{bk} Psi-(x) J-) [-K(b)]^{-1}
//
// where J+ / J- select the [E+|E0] / [E0|E-] coordinate columns and K is the
// characteristic matrix function of the embedding.  Row i of Psi+(x) h+ is
// the expected value of h+ at the upper-exit coordinate starting from
// (x, state i), killed mass excluded; Psi0(b, x) diag(h) q_kill collects the
// e^{b A} functional of paths killed strictly inside the interval.
#pragma once

#include <rsjd/wiener_hopf.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

namespace rsjd {

/// Condition-estimate threshold beyond which an exit interval is flagged
/// degenerate (k and l too close for the boundary coupling to be resolved).
inline constexpr double kDegenerateExitCondition = 1e12;

/// Absolute tolerance for Gerber-Shiu penalty quadrature.
inline constexpr double kPenaltyQuadratureTol = 1e-10;

namespace detail {

inline std::string state_name(const StateSpace& st, int e) {
  std::ostringstream os;
  os << "state " << e;
  if (st.is_plus(e)) {
    os << " (plus phase " << e - st.plus_offset[st.owner(e)] << " of regime "
       << st.owner(e) << ")";
  } else if (st.is_zero(e)) {
    os << " (diffusion state of regime " << st.owner(e) << ")";
  } else {
    os << " (minus phase " << e - st.minus_offset[st.owner(e)] << " of regime "
       << st.owner(e) << ")";
  }
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Two-sided exit operator
// ---------------------------------------------------------------------------

/// Precomputed data for exit from [lower, upper]. Immutable after
/// construction; all evaluators are pure and safe for concurrent reads.
struct ExitOperator {
  FluidEmbedding fe;
  WHFactorization fac;
  double lower = 0.0;  // k
  double upper = 0.0;  // l
  Matrix Zp;           // N0- x N0+
  Matrix Zm;           // N0+ x N0-
  Matrix inv_imzz_p;   // (I - Z- Z+)^{-1}
  Matrix inv_imzz_m;   // (I - Z+ Z-)^{-1}
  double condition = 1.0;   // max condition estimate of the two couplings
  bool degenerate = false;  // condition too large: interval ~ a single point
};

inline ExitOperator make_exit_operator(const FluidEmbedding& fe,
                                       const WHFactorization& fac, double k,
                                       double l) {
  if (!(k < l)) throw validation_error("exit interval requires k < l");
  if (fac.Wp.rows() != fe.states.total() ||
      fac.Wm.rows() != fe.states.total())
    throw validation_error("factorization does not match the embedding");
  const int n0p = static_cast<int>(fac.Wp.cols());
  const int n0m = static_cast<int>(fac.Wm.cols());
  const double delta = l - k;

  ExitOperator e;
  e.fe = fe;
  e.fac = fac;
  e.lower = k;
  e.upper = l;
  e.Zp = (fac.Wp * expm(fac.Qp * delta)).bottomRows(n0m);
  e.Zm = (fac.Wm * expm(fac.Qm * delta)).topRows(n0p);

  const Matrix coupling = e.Zm * e.Zp;
  Eigen::EigenSolver<Matrix> es(coupling, false);
  const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
  if (rho > 1.0 + 1e-8) {
    std::ostringstream os;
    os << "exit boundary coupling has spectral radius " << rho
       << " > 1; the factorization is inconsistent with the interval";
    throw numerical_error(os.str());
  }

  const Matrix ip = Matrix::Identity(n0p, n0p) - coupling;
  const Matrix im = Matrix::Identity(n0m, n0m) - e.Zp * e.Zm;
  e.condition = std::max(condition_estimate(ip), condition_estimate(im));
  e.degenerate =
      !(e.condition < kDegenerateExitCondition) || rho >= 1.0 - 1e-12;
  if (!e.degenerate) {
    e.inv_imzz_p = ip.fullPivLu().inverse();
    e.inv_imzz_m = im.fullPivLu().inverse();
  }
  return e;
}

namespace detail {

inline void check_exit_point(const ExitOperator& e, double x) {
  const double slack =
      1e-12 * (1.0 + std::abs(e.lower) + std::abs(e.upper));
  if (x < e.lower - slack || x > e.upper + slack) {
    std::ostringstream os;
    os << "evaluation point x=" << x << " lies outside the exit interval ["
       << e.lower << ", " << e.upper << "]";
    throw validation_error(os.str());
  }
  if (e.degenerate) {
    std::ostringstream os;
    os << "exit interval [" << e.lower << ", " << e.upper
       << "] is numerically degenerate (coupling condition " << e.condition
       << "); as k -> l the operators converge to the one-sided limits "
          "(Psi+ -> W+ rows), so use phi_plus/phi_minus instead";
    throw numerical_error(os.str());
  }
}

}  // namespace detail

/// E_{x,i}[h+(upper-exit coordinate); exit above, before killing]
///   = (psi_plus(e, x) h+)(i).
inline Matrix psi_plus(const ExitOperator& e, double x) {
  detail::check_exit_point(e, x);
  const Matrix up = e.fac.Wp * expm(e.fac.Qp * (e.upper - x));
  const Matrix dn = e.fac.Wm * expm(e.fac.Qm * (x - e.lower));
  return (up - dn * e.Zp) * e.inv_imzz_p;
}

inline Matrix psi_minus(const ExitOperator& e, double x) {
  detail::check_exit_point(e, x);
  const Matrix up = e.fac.Wp * expm(e.fac.Qp * (e.upper - x));
  const Matrix dn = e.fac.Wm * expm(e.fac.Qm * (x - e.lower));
  return (dn - up * e.Zm) * e.inv_imzz_m;
}

/// d/dx of psi_plus / psi_minus (exact: differentiates the exponentials).
inline Matrix psi_plus_deriv(const ExitOperator& e, double x) {
  detail::check_exit_point(e, x);
  const Matrix up = e.fac.Wp * e.fac.Qp * expm(e.fac.Qp * (e.upper - x));
  const Matrix dn = e.fac.Wm * e.fac.Qm * expm(e.fac.Qm * (x - e.lower));
  return (-up - dn * e.Zp) * e.inv_imzz_p;
}

inline Matrix psi_minus_deriv(const ExitOperator& e, double x) {
  detail::check_exit_point(e, x);
  const Matrix up = e.fac.Wp * e.fac.Qp * expm(e.fac.Qp * (e.upper - x));
  const Matrix dn = e.fac.Wm * e.fac.Qm * expm(e.fac.Qm * (x - e.lower));
  return (dn + up * e.Zm) * e.inv_imzz_m;
}

/// The exponent condition making -K(b) an invertible M-matrix:
///   s(i)^2 b^2 + m(i) b < -q_ii for every embedded state i.
/// Throws naming the violating state.
inline void check_exponent_condition(const FluidEmbedding& fe, double b) {
  for (int i = 0; i < fe.states.total(); ++i) {
    const double lhs = fe.sigma(i) * fe.sigma(i) * b * b + fe.v(i) * b;
    if (!(lhs < -fe.Q(i, i))) {
      std::ostringstream os;
      os << "exponent condition s(i)^2 b^2 + m(i) b < -q_ii fails for b=" << b
         << " at " << detail::state_name(fe.states, i) << ": " << lhs
         << " >= " << -fe.Q(i, i);
      throw validation_error(os.str());
    }
  }
}

namespace detail {

/// Right-multiplies by [-K(b)]^{-1} with an explicit residual guard.
inline Matrix apply_inv_negk(const FluidEmbedding& fe, double b,
                             const Matrix& num) {
  const Matrix negk = -characteristic_K(fe, b);
  Eigen::FullPivLU<Matrix> lu(negk.transpose());
  if (!lu.isInvertible())
    throw numerical_error(
        "-K(b) is singular; the killed-functional kernel does not exist "
        "(conservative embedding with b = 0?)");
  const Matrix out = lu.solve(num.transpose()).transpose();
  const double resid = (out * negk - num).cwiseAbs().maxCoeff();
  if (!(resid <= 1e-8 * (1.0 + num.cwiseAbs().maxCoeff())))
    throw numerical_error("-K(b) solve stalled; matrix is near-singular");
  return out;
}

/// Assembly without the exponent-condition gate, for callers that establish a
/// weaker sufficient condition of their own (the first-passage solver's band
/// operators). The numerator identity and the -K(b) residual guard still hold.
inline Matrix psi_circ_unchecked(const ExitOperator& e, double b, double x) {
  check_exit_point(e, x);
  const int n = e.fe.states.total();
  const int n0p = static_cast<int>(e.fac.Wp.cols());
  const int n0m = static_cast<int>(e.fac.Wm.cols());
  Matrix num = std::exp(b * x) * Matrix::Identity(n, n);
  num.leftCols(n0p) -= std::exp(b * e.upper) * psi_plus(e, x);
  num.rightCols(n0m) -= std::exp(b * e.lower) * psi_minus(e, x);
  return apply_inv_negk(e.fe, b, num);
}

inline Matrix psi_circ_deriv_unchecked(const ExitOperator& e, double b,
                                       double x) {
  check_exit_point(e, x);
  const int n = e.fe.states.total();
  const int n0p = static_cast<int>(e.fac.Wp.cols());
  const int n0m = static_cast<int>(e.fac.Wm.cols());
  Matrix num = b * std::exp(b * x) * Matrix::Identity(n, n);
  num.leftCols(n0p) -= std::exp(b * e.upper) * psi_plus_deriv(e, x);
  num.rightCols(n0m) -= std::exp(b * e.lower) * psi_minus_deriv(e, x);
  return apply_inv_negk(e.fe, b, num);
}

}  // namespace detail

/// Kernel of the killed functional: for any h on E,
///   E_{x,i}[e^{b A_{zeta-}} h(Y_{zeta-}); killed strictly inside [k, l]]
///     = (psi_circ(e, b, x) diag(h) q_kill)(i),  q_kill = fe.kill.
inline Matrix psi_circ(const ExitOperator& e, double b, double x) {
  check_exponent_condition(e.fe, b);
  return detail::psi_circ_unchecked(e, b, x);
}

inline Matrix psi_circ_deriv(const ExitOperator& e, double b, double x) {
  check_exponent_condition(e.fe, b);
  return detail::psi_circ_deriv_unchecked(e, b, x);
}

/// e_i' psi_circ(e,b,x) diag(hdag) q_kill for all i at once. Identically zero
/// for conservative embeddings (no killing means zeta = infinity a.s.).
inline Vector killed_functional(const ExitOperator& e, double b, double x,
                                const Vector& hdag) {
  if (hdag.size() != e.fe.states.total())
    throw validation_error("killed_functional: h has wrong dimension");
  if (e.fe.kill.cwiseAbs().maxCoeff() == 0.0)
    return Vector::Zero(e.fe.states.total());
  return psi_circ(e, b, x) * hdag.cwiseProduct(e.fe.kill);
}

// ---------------------------------------------------------------------------
// One-sided passage operators
// ---------------------------------------------------------------------------

/// Phi-_level(x) = W- exp(Q- (x - level)), defined for x >= level. Column c
/// is the (killing-discounted) probability-like weight of first reaching
/// `level` in down-ladder coordinate c.
inline Matrix phi_minus(const WHFactorization& fac, double level, double x) {
  if (x < level - 1e-12 * (1.0 + std::abs(level))) {
    std::ostringstream os;
    os << "phi_minus requires x >= level (x=" << x << ", level=" << level
       << ")";
    throw validation_error(os.str());
  }
  return fac.Wm * expm(fac.Qm * (x - level));
}

inline Matrix phi_minus_deriv(const WHFactorization& fac, double level,
                              double x) {
  if (x < level - 1e-12 * (1.0 + std::abs(level)))
    throw validation_error("phi_minus_deriv requires x >= level");
  return fac.Wm * fac.Qm * expm(fac.Qm * (x - level));
}

/// Phi+_level(x) = W+ exp(Q+ (level - x)), defined for x <= level.
inline Matrix phi_plus(const WHFactorization& fac, double level, double x) {
  if (x > level + 1e-12 * (1.0 + std::abs(level))) {
    std::ostringstream os;
    os << "phi_plus requires x <= level (x=" << x << ", level=" << level
       << ")";
    throw validation_error(os.str());
  }
  return fac.Wp * expm(fac.Qp * (level - x));
}

inline Matrix phi_plus_deriv(const WHFactorization& fac, double level,
                             double x) {
  if (x > level + 1e-12 * (1.0 + std::abs(level)))
    throw validation_error("phi_plus_deriv requires x <= level");
  return -(fac.Wp * fac.Qp * expm(fac.Qp * (level - x)));
}

// ---------------------------------------------------------------------------
// Gerber-Shiu penalty functionals
// ---------------------------------------------------------------------------

/// Penalty pi(y, m) evaluated at the ruin position y = X_rho <= 0 and the
/// regime m at ruin. The library knows closed forms for the first three
/// kinds; `custom` falls back to adaptive Gauss-Legendre quadrature against
/// the phase-type overshoot density.
struct RuinPenalty {
  enum class Kind { one, regime_indicator, exponential, custom };

  Kind kind = Kind::one;
  int regime = -1;    // regime_indicator: pi(y, m) = 1{m == regime}
  double theta = 0.0; // exponential: pi(y, m) = exp(theta * y)
  std::function<double(double, int)> pi;  // custom: pi(y, m), y <= 0

  static RuinPenalty one() { return RuinPenalty{}; }
  static RuinPenalty regime_at_ruin(int j) {
    RuinPenalty p;
    p.kind = Kind::regime_indicator;
    p.regime = j;
    return p;
  }
  static RuinPenalty exponential(double theta) {
    RuinPenalty p;
    p.kind = Kind::exponential;
    p.theta = theta;
    return p;
  }
  static RuinPenalty custom_fn(std::function<double(double, int)> f) {
    RuinPenalty p;
    p.kind = Kind::custom;
    p.pi = std::move(f);
    return p;
  }
};

namespace detail {

// --- 7/15-point Gauss-Legendre pair on [a, b]: returns {I15, |I15 - I7|} ---
template <class F>
inline std::pair<double, double> gl_panel(F&& f, double a, double b) {
  static constexpr double kX7[3] = {0.4058451513773972, 0.7415311855993945,
                                    0.9491079123427585};
  static constexpr double kW7[3] = {0.3818300505051189, 0.2797053914892766,
                                    0.1294849661688697};
  static constexpr double kW7C = 0.4179591836734694;
  static constexpr double kX15[7] = {0.2011940939974345, 0.3941513470775634,
                                     0.5709721726085388, 0.7244177313601701,
                                     0.8482065834104272, 0.9372733924007060,
                                     0.9879925180204854};
  static constexpr double kW15[7] = {0.1984314853271116, 0.1861610000155622,
                                     0.1662692058169939, 0.1395706779261543,
                                     0.1071592204671719, 0.0703660474881081,
                                     0.0307532419961173};
  static constexpr double kW15C = 0.2025782419255613;
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  const double fc = f(c);
  double s7 = kW7C * fc;
  double s15 = kW15C * fc;
  for (int j = 0; j < 3; ++j)
    s7 += kW7[j] * (f(c - h * kX7[j]) + f(c + h * kX7[j]));
  for (int j = 0; j < 7; ++j)
    s15 += kW15[j] * (f(c - h * kX15[j]) + f(c + h * kX15[j]));
  if (!std::isfinite(s15) || !std::isfinite(s7))
    throw numerical_error("penalty integrand is not finite");
  return {h * s15, std::abs(h * (s15 - s7))};
}

template <class F>
inline double adaptive_gl(F&& f, double a, double b, double tol,
                          int depth = 0) {
  const auto [value, err] = gl_panel(f, a, b);
  // Accept on the absolute target or once the panel error reaches the
  // roundoff floor relative to the panel's own magnitude; without the
  // relative branch, large-magnitude panels can never converge and the
  // bisection tree explodes.
  if (err <= tol + 1e-13 * std::abs(value) ||
      b - a < 1e-14 * (1.0 + std::abs(a)))
    return value;
  if (depth >= 30) {
    if (err > std::max(tol * 16.0, 1e-9 * (1.0 + std::abs(value))))
      throw numerical_error("adaptive quadrature failed to converge");
    return value;
  }
  const double m = 0.5 * (a + b);
  return adaptive_gl(f, a, m, 0.5 * tol, depth + 1) +
         adaptive_gl(f, m, b, 0.5 * tol, depth + 1);
}

/// Integral of f over [0, infinity) for integrands with decaying tails
/// (penalty times a phase-type density). Detects divergence by watching the
/// per-segment contributions.
template <class F>
inline double integrate_penalty_tail(F&& f, double tol) {
  double total = 0.0, a = 0.0, width = 1.0;
  double prev = std::numeric_limits<double>::infinity();
  int calm = 0, growing = 0;
  for (int seg = 0; seg < 64; ++seg) {
    // Probe the segment with a single panel first so a growing tail is
    // detected before any refinement effort is spent on it.
    const auto [probe, perr] = gl_panel(f, a, a + width);
    const double mag = std::abs(probe);
    growing = (seg >= 3 && mag > prev && mag > tol) ? growing + 1 : 0;
    if (growing >= 3)
      throw numerical_error("penalty integral appears divergent (growing tail)");
    prev = mag;

    const double part = (perr <= 0.25 * tol + 1e-13 * mag)
                            ? probe
                            : adaptive_gl(f, a, a + width, 0.25 * tol);
    total += part;
    if (!std::isfinite(total) || std::abs(total) > 1e100)
      throw numerical_error("penalty integral appears divergent");
    calm = (std::abs(part) <= 0.25 * tol) ? calm + 1 : 0;
    if (calm >= 2) return total;
    a += width;
    width = std::min(2.0 * width, 16.0);
  }
  throw numerical_error(
      "penalty integral did not converge; penalty may be non-integrable");
}

inline double penalty_at_zero(const RuinPenalty& pen, int regime) {
  switch (pen.kind) {
    case RuinPenalty::Kind::one:
      return 1.0;
    case RuinPenalty::Kind::regime_indicator:
      return regime == pen.regime ? 1.0 : 0.0;
    case RuinPenalty::Kind::exponential:
      return 1.0;  // exp(theta * 0)
    case RuinPenalty::Kind::custom:
      return pen.pi(0.0, regime);
  }
  throw validation_error("unknown penalty kind");
}

/// gbar entries for the minus-phase block of one regime: component l is
/// integral_0^inf pi(-s, m) e_l' e^{s T} t ds.
inline Vector penalty_block(const RuinPenalty& pen, int regime,
                            const Matrix& tmat, const Vector& tvec) {
  const int sz = static_cast<int>(tvec.size());
  switch (pen.kind) {
    case RuinPenalty::Kind::one:
      return (-tmat).partialPivLu().solve(tvec);
    case RuinPenalty::Kind::regime_indicator:
      if (regime != pen.regime) return Vector::Zero(sz);
      return (-tmat).partialPivLu().solve(tvec);
    case RuinPenalty::Kind::exponential: {
      // integral e^{-theta s} e^{sT} t ds = (theta I - T)^{-1} t, convergent
      // iff theta exceeds the spectral abscissa of T.
      Eigen::EigenSolver<Matrix> es(tmat, false);
      const double abscissa = es.eigenvalues().real().maxCoeff();
      if (!(pen.theta > abscissa + 1e-12)) {
        std::ostringstream os;
        os << "exponential penalty integral is divergent: theta=" << pen.theta
           << " does not exceed the overshoot-density abscissa " << abscissa
           << " of regime " << regime;
        throw numerical_error(os.str());
      }
      const Matrix shifted =
          pen.theta * Matrix::Identity(sz, sz) - tmat;
      return shifted.partialPivLu().solve(tvec);
    }
    case RuinPenalty::Kind::custom: {
      Vector out(sz);
      for (int l = 0; l < sz; ++l) {
        auto f = [&](double s) {
          const Vector dens = expm(tmat * s) * tvec;
          return pen.pi(-s, regime) * dens(l);
        };
        out(l) = integrate_penalty_tail(f, kPenaltyQuadratureTol);
      }
      return out;
    }
  }
  throw validation_error("unknown penalty kind");
}

}  // namespace detail

/// Gerber-Shiu expected discounted penalty, one value per embedded starting
/// state: E_{x,i}[e^{-R_rho} pi(X_rho, Z_rho)] = (Phi-_0(x) gbar)(i) where
/// rho is the first passage below 0 and R the accumulated killing. The
/// discounting is whatever killing the embedding behind `fac` carries.
inline Vector gerber_shiu_vector(const FluidEmbedding& fe,
                                 const WHFactorization& fac, double x,
                                 const RuinPenalty& pen) {
  if (x < 0.0) throw validation_error("gerber_shiu requires x >= 0");
  if (fac.Wm.rows() != fe.states.total())
    throw validation_error("factorization does not match the embedding");
  const StateSpace& st = fe.states;
  const int n0m = static_cast<int>(fac.Wm.cols());

  Vector gbar = Vector::Zero(n0m);
  for (int i = 0; i < st.n_regimes; ++i)
    gbar(i) = detail::penalty_at_zero(pen, i);
  int c = st.n_regimes;
  for (int m = 0; m < st.n_regimes; ++m) {
    const int sz = st.minus_size[m];
    if (sz == 0) continue;
    const int off = st.minus_offset[m];
    const Matrix tmat = fe.Q.block(off, off, sz, sz);
    const Vector tvec = fe.Q.col(st.zero_index(m)).segment(off, sz);
    gbar.segment(c, sz) = detail::penalty_block(pen, m, tmat, tvec);
    c += sz;
  }
  return (fac.Wm * expm(fac.Qm * x)) * gbar;
}

/// Scalar Gerber-Shiu value from one embedded starting state.
inline double gerber_shiu(const FluidEmbedding& fe, const WHFactorization& fac,
                          double x, int state, const RuinPenalty& pen) {
  if (state < 0 || state >= fe.states.total())
    throw validation_error("gerber_shiu: starting state out of range");
  return gerber_shiu_vector(fe, fac, x, pen)(state);
}

}  // namespace rsjd
