#pragma once

// Matrix Wiener-Hopf factorization of the fluid embedding: the quadruple
// (eta+, Q+, eta-, Q-) solving Xi(-Q+, W+) = O and Xi(Q-, W-) = O with
// Xi(S, W) = (1/2) Sigma^2 W S^2 + V W S + Q_a W.
//
// Primary algorithm is spectral: the zeros of det K(s), K(s) = (1/2) Sigma^2
// s^2 + V s + Q_a, are the eigenvalues of an exactly-sized linearization of
// the quadratic eigenvalue problem (Newton-polished on log det K), split by
// the sign of their real part, and each side's ladder generator is rebuilt
// from the null vectors of K at its roots. A damped
// Newton iteration on the block form of the defining equation then polishes
// the result to roundoff, and doubles as the solver when roots cluster and
// the eigenbasis degenerates (the classical Riccati-iteration safety net,
// started from a slightly killed perturbation of the embedding).

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "embedding.hpp"
#include "linalg.hpp"

namespace rsjd {

inline Matrix characteristic_K(const FluidEmbedding& fe, double s) {
  Matrix k = fe.Q;
  k.diagonal() +=
      (0.5 * s * s) * fe.sigma.array().square().matrix() + s * fe.v;
  return k;
}

inline CMatrix characteristic_K(const FluidEmbedding& fe,
                                std::complex<double> s) {
  CMatrix k = fe.Q.cast<std::complex<double>>();
  for (int i = 0; i < fe.states.total(); ++i) {
    k(i, i) += 0.5 * fe.sigma(i) * fe.sigma(i) * s * s + fe.v(i) * s;
  }
  return k;
}

enum class DriftClass { transient, drift_up, drift_down, oscillating };

inline const char* to_string(DriftClass c) {
  switch (c) {
    case DriftClass::transient: return "transient";
    case DriftClass::drift_up: return "drift_up";
    case DriftClass::drift_down: return "drift_down";
    default: return "oscillating";
  }
}

struct SpectralData {
  CVector roots;                  // polished zeros of det K
  CMatrix eigvecs;                // column j: null vector of K(roots(j))
  std::vector<int> multiplicity;  // cluster size each root belongs to
  int n_neg = 0;                  // Re < 0 strictly
  int n_pos = 0;                  // Re > 0 strictly
};

struct WHFactorization {
  Matrix eta_plus;   // N- x N0+
  Matrix Qp;         // N0+ x N0+
  Matrix eta_minus;  // N+ x N0-
  Matrix Qm;         // N0- x N0-
  Matrix Wp;         // |E| x N0+, rows [I+ O; O I0; eta+]
  Matrix Wm;         // |E| x N0-, rows [eta-; I0 O; O I-]
  DriftClass klass = DriftClass::transient;
  double stationary_drift = 0.0;  // pi' V 1 when recurrent, NaN otherwise
  double residual_plus = 0.0;
  double residual_minus = 0.0;
};

inline Matrix xi_residual(const FluidEmbedding& fe, const Matrix& s,
                          const Matrix& w) {
  const Matrix ws = w * s;
  return 0.5 * (fe.sigma.array().square().matrix().asDiagonal() * (ws * s)) +
         fe.v.asDiagonal() * ws + fe.Q * w;
}

inline Matrix assemble_w_plus(const StateSpace& st, const Matrix& eta_plus) {
  const int n0p = st.n_regimes + st.n_plus;
  Matrix w = Matrix::Zero(st.total(), n0p);
  for (int e = 0; e < st.n_plus; ++e) w(e, e) = 1.0;
  for (int i = 0; i < st.n_regimes; ++i) {
    w(st.zero_index(i), st.n_plus + i) = 1.0;
  }
  for (int r = 0; r < st.n_minus; ++r) {
    w.row(st.zero_offset + st.n_regimes + r) = eta_plus.row(r);
  }
  return w;
}

inline Matrix assemble_w_minus(const StateSpace& st, const Matrix& eta_minus) {
  const int n0m = st.n_regimes + st.n_minus;
  Matrix w = Matrix::Zero(st.total(), n0m);
  for (int r = 0; r < st.n_plus; ++r) w.row(r) = eta_minus.row(r);
  for (int i = 0; i < st.n_regimes; ++i) w(st.zero_index(i), i) = 1.0;
  for (int e = 0; e < st.n_minus; ++e) {
    w(st.zero_offset + st.n_regimes + e, st.n_regimes + e) = 1.0;
  }
  return w;
}

// Stationary law of an unkilled generator, for the drift trichotomy.
inline Vector stationary_law(const Matrix& q) {
  const int n = static_cast<int>(q.rows());
  Matrix a(n + 1, n);
  a.topRows(n) = q.transpose();
  a.row(n).setOnes();
  Vector b = Vector::Zero(n + 1);
  b(n) = 1.0;
  Vector pi = a.colPivHouseholderQr().solve(b);
  if ((q.transpose() * pi).cwiseAbs().maxCoeff() >
      1e-8 * std::max(1.0, q.cwiseAbs().maxCoeff())) {
    throw numerical_error("stationary law solve failed");
  }
  if ((pi.array() < -1e-10).any()) {
    throw numerical_error("stationary law has a negative mass");
  }
  return pi.cwiseMax(0.0);
}

inline DriftClass classify(const FluidEmbedding& fe, double* drift = nullptr) {
  const double qscale = std::max(1.0, fe.Q.cwiseAbs().maxCoeff());
  if (drift) *drift = std::numeric_limits<double>::quiet_NaN();
  if (fe.kill.cwiseAbs().maxCoeff() > 1e-12 * qscale) {
    return DriftClass::transient;
  }
  const double rho = stationary_law(fe.Q).dot(fe.v);
  if (drift) *drift = rho;
  if (std::abs(rho) <= 1e-10) return DriftClass::oscillating;
  return rho > 0.0 ? DriftClass::drift_up : DriftClass::drift_down;
}

namespace detail {

// All roots of det K. The quadratic dependence on s enters only through the
// diffusion rows, so adjoining u = s x restricted to E0 linearizes
// K(s) x = 0 into the pencil A + s B of size d = |E| + N, which is the exact
// degree of det K; det B = +-prod(sigma_i^2 / 2) != 0, so the roots are the
// eigenvalues of the companion matrix -B^{-1} A, with no spurious or
// missing values by construction.
inline CVector determinant_roots(const FluidEmbedding& fe) {
  const StateSpace& st = fe.states;
  const int n = st.total();
  const int nz = st.n_regimes;
  const int d = n + nz;
  Matrix a = Matrix::Zero(d, d);
  Matrix b = Matrix::Zero(d, d);
  a.topLeftCorner(n, n) = fe.Q;
  a.bottomRightCorner(nz, nz) = -Matrix::Identity(nz, nz);
  b.topLeftCorner(n, n) = fe.v.asDiagonal();
  for (int i = 0; i < nz; ++i) {
    const int z = st.zero_index(i);
    b(z, n + i) = 0.5 * fe.sigma(z) * fe.sigma(z);
    b(n + i, z) = 1.0;
  }
  const Matrix companion = -b.partialPivLu().solve(a);
  if (!companion.allFinite()) {
    throw numerical_error("characteristic pencil is singular");
  }
  Eigen::EigenSolver<Matrix> es(companion, false);
  return es.eigenvalues();
}

// Newton polish on log det K: d/ds log det K(s) = tr(K^{-1} K').
inline std::complex<double> polish_root(const FluidEmbedding& fe,
                                        std::complex<double> theta) {
  const int n = fe.states.total();
  for (int it = 0; it < 12; ++it) {
    CMatrix k = characteristic_K(fe, theta);
    CMatrix kp = CMatrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      kp(i, i) = fe.sigma(i) * fe.sigma(i) * theta + fe.v(i);
    }
    const std::complex<double> tr =
        Eigen::PartialPivLU<CMatrix>(k).solve(kp).trace();
    const std::complex<double> step = -1.0 / tr;
    if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) break;
    theta += step;
    if (std::abs(step) < 1e-14 * (1.0 + std::abs(theta))) break;
  }
  if (std::abs(theta.imag()) <= 1e-8 * (1.0 + std::abs(theta.real()))) {
    theta = std::complex<double>(theta.real(), 0.0);
  }
  return theta;
}

inline CVector null_vector(const CMatrix& k) {
  Eigen::JacobiSVD<CMatrix> svd(k, Eigen::ComputeFullV);
  return svd.matrixV().col(k.cols() - 1);
}

}  // namespace detail

inline SpectralData spectral_roots(const FluidEmbedding& fe) {
  SpectralData sd;
  sd.roots = detail::determinant_roots(fe);
  const int d = static_cast<int>(sd.roots.size());
  for (int j = 0; j < d; ++j) {
    sd.roots(j) = detail::polish_root(fe, sd.roots(j));
  }
  const int n = fe.states.total();
  sd.eigvecs = CMatrix::Zero(n, d);
  for (int j = 0; j < d; ++j) {
    sd.eigvecs.col(j) = detail::null_vector(characteristic_K(fe, sd.roots(j)));
  }
  sd.multiplicity.assign(d, 1);
  for (int i = 0; i < d; ++i) {
    int count = 0;
    for (int j = 0; j < d; ++j) {
      if (std::abs(sd.roots(i) - sd.roots(j)) <
          1e-7 * std::max(1.0, std::abs(sd.roots(i)))) {
        ++count;
      }
    }
    sd.multiplicity[i] = count;
  }
  for (int j = 0; j < d; ++j) {
    const double re = sd.roots(j).real();
    if (re < 0.0) ++sd.n_neg;
    if (re > 0.0) ++sd.n_pos;
  }
  return sd;
}

namespace detail {

struct SidePairs {
  CVector theta;  // ladder exponents for this side
  CMatrix beta;   // |E| x m null vectors, column-aligned with theta
};

// Split polished roots into the two ladder sides. Recurrent embeddings have
// det K(0) = 0 structurally: the expected number of near-zero roots is
// snapped to exactly zero (null vector = ones) and assigned to the
// conservative side(s) according to the drift direction.
inline std::pair<SidePairs, SidePairs> split_roots(const FluidEmbedding& fe,
                                                   const SpectralData& sd,
                                                   DriftClass klass) {
  const int n = fe.states.total();
  const int n0m = fe.states.n_regimes + fe.states.n_minus;
  const int n0p = fe.states.n_regimes + fe.states.n_plus;
  const int want_zero = klass == DriftClass::transient     ? 0
                        : klass == DriftClass::oscillating ? 2
                                                           : 1;
  std::vector<int> order(sd.roots.size());
  for (size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(sd.roots(a)) < std::abs(sd.roots(b));
  });
  for (int j = 0; j < want_zero; ++j) {
    if (std::abs(sd.roots(order[j])) > 3e-4) {
      throw numerical_error(
          "recurrent embedding lacks the structural zero root (smallest "
          "root magnitude " +
          std::to_string(std::abs(sd.roots(order[j]))) + ")");
    }
  }

  std::vector<int> minus_idx, plus_idx;
  for (size_t j = want_zero; j < order.size(); ++j) {
    const std::complex<double> th = sd.roots(order[j]);
    if (th.real() < 0.0) {
      minus_idx.push_back(order[j]);
    } else if (th.real() > 0.0) {
      plus_idx.push_back(order[j]);
    } else {
      throw numerical_error("unexpected root on the imaginary axis");
    }
  }
  int zeros_minus = 0, zeros_plus = 0;
  if (klass == DriftClass::drift_down) zeros_minus = 1;
  if (klass == DriftClass::drift_up) zeros_plus = 1;
  if (klass == DriftClass::oscillating) zeros_minus = zeros_plus = 1;

  if (static_cast<int>(minus_idx.size()) + zeros_minus != n0m ||
      static_cast<int>(plus_idx.size()) + zeros_plus != n0p) {
    throw numerical_error(
        "root split mismatch: got " + std::to_string(minus_idx.size()) + "+" +
        std::to_string(zeros_minus) + " negative vs expected " +
        std::to_string(n0m) + " and " + std::to_string(plus_idx.size()) + "+" +
        std::to_string(zeros_plus) + " positive vs expected " +
        std::to_string(n0p));
  }

  const auto fill = [&](const std::vector<int>& idx, int zeros) {
    SidePairs side;
    side.theta = CVector::Zero(static_cast<int>(idx.size()) + zeros);
    side.beta = CMatrix::Zero(n, side.theta.size());
    for (size_t j = 0; j < idx.size(); ++j) {
      side.theta(static_cast<int>(j)) = sd.roots(idx[j]);
      side.beta.col(static_cast<int>(j)) = sd.eigvecs.col(idx[j]);
    }
    for (int z = 0; z < zeros; ++z) {
      const int at = static_cast<int>(idx.size()) + z;
      side.theta(at) = 0.0;
      side.beta.col(at) = CVector::Ones(n);
    }
    return side;
  };
  return {fill(minus_idx, zeros_minus), fill(plus_idx, zeros_plus)};
}

inline bool side_is_degenerate(const SidePairs& side) {
  for (int i = 0; i < side.theta.size(); ++i) {
    for (int j = i + 1; j < side.theta.size(); ++j) {
      if (std::abs(side.theta(i) - side.theta(j)) <
          1e-7 * std::max(1.0, std::abs(side.theta(i)))) {
        return true;
      }
    }
  }
  return false;
}

// S = B diag(+-theta) B^{-1} with B the null vectors restricted to the
// side's own coordinates; the complementary rows give eta in the same basis.
inline std::pair<Matrix, Matrix> reconstruct_side(
    const SidePairs& side, const std::vector<int>& own_rows,
    const std::vector<int>& other_rows, bool negate) {
  const int m = static_cast<int>(side.theta.size());
  CMatrix basis(m, m);
  CMatrix other(static_cast<int>(other_rows.size()), m);
  for (int j = 0; j < m; ++j) {
    for (int r = 0; r < m; ++r) basis(r, j) = side.beta(own_rows[r], j);
    for (size_t r = 0; r < other_rows.size(); ++r) {
      other(static_cast<int>(r), j) = side.beta(other_rows[r], j);
    }
  }
  Eigen::FullPivLU<CMatrix> lu(basis);
  if (!lu.isInvertible()) {
    throw numerical_error("spectral eigenbasis is singular");
  }
  CMatrix basis_inv = lu.inverse();
  const double cond = basis.cwiseAbs().rowwise().sum().maxCoeff() *
                      basis_inv.cwiseAbs().rowwise().sum().maxCoeff();
  if (cond > 1e10) {
    throw numerical_error("spectral eigenbasis condition " +
                          std::to_string(cond));
  }
  CVector dvec = negate ? CVector(-side.theta) : side.theta;
  CMatrix q = basis * dvec.asDiagonal() * basis_inv;
  CMatrix eta = other * basis_inv;
  return {realify(q, 1e-10), realify(eta, 1e-10)};
}

inline std::vector<int> minus_rows(const StateSpace& st) {
  std::vector<int> rows = st.zero_indices();
  const auto m = st.minus_indices();
  rows.insert(rows.end(), m.begin(), m.end());
  return rows;
}

inline std::vector<int> plus_rows(const StateSpace& st) {
  std::vector<int> rows = st.plus_indices();
  const auto z = st.zero_indices();
  rows.insert(rows.end(), z.begin(), z.end());
  return rows;
}

// Block data for one side of the defining equation, written in the ladder
// variable S (S = Q- for the minus side, S = -Q+ for the plus side). The
// side's own phase rows of S are structurally constant; the E0 rows X and
// eta satisfy
//   R0(X, eta)  = (1/2) diag(sig2) X S + diag(mu) X + C + B_oth eta = O,
//   Reta(X,eta) = s_oth eta S + T_oth eta + U = O,
// and a damped Newton iteration on (X, eta) solves both blocks jointly.
struct SideSystem {
  bool minus_side;
  int n0, m_own, n_oth, w, zero_at;
  double s_oth;
  Matrix phase_rows;  // constant rows of S (own phases)
  Matrix c_const;     // C
  Matrix b_oth;       // coupling of eta into the E0 block
  Matrix t_oth;       // T of the other side's phases
  Matrix u_const;     // U
  Vector sig2, mu;

  Matrix assemble(const Matrix& x) const {
    Matrix s(w, w);
    if (minus_side) {
      s.topRows(n0) = x;
      s.bottomRows(m_own) = phase_rows;
    } else {
      s.topRows(m_own) = phase_rows;
      s.bottomRows(n0) = x;
    }
    return s;
  }

  double residual(const Matrix& x, const Matrix& eta, Matrix* r0 = nullptr,
                  Matrix* reta = nullptr) const {
    const Matrix s = assemble(x);
    Matrix rz = 0.5 * sig2.asDiagonal().toDenseMatrix() * (x * s) +
                mu.asDiagonal().toDenseMatrix() * x + c_const;
    if (n_oth > 0) rz += b_oth * eta;
    double worst = rz.cwiseAbs().maxCoeff();
    Matrix re;
    if (n_oth > 0) {
      re = s_oth * (eta * s) + t_oth * eta + u_const;
      worst = std::max(worst, re.cwiseAbs().maxCoeff());
    }
    if (r0) *r0 = std::move(rz);
    if (reta && n_oth > 0) *reta = std::move(re);
    return worst;
  }
};

inline SideSystem side_system(const FluidEmbedding& fe, bool minus_side) {
  const StateSpace& st = fe.states;
  const auto zero = st.zero_indices();
  const auto own = minus_side ? st.minus_indices() : st.plus_indices();
  const auto oth = minus_side ? st.plus_indices() : st.minus_indices();

  SideSystem ss;
  ss.minus_side = minus_side;
  ss.n0 = st.n_regimes;
  ss.m_own = static_cast<int>(own.size());
  ss.n_oth = static_cast<int>(oth.size());
  ss.w = ss.n0 + ss.m_own;
  ss.zero_at = minus_side ? 0 : ss.m_own;
  ss.s_oth = minus_side ? 1.0 : -1.0;
  const double sign = minus_side ? 1.0 : -1.0;  // plus side blocks negate
  const int zero_col = ss.zero_at;              // E0 columns share the offset
  const int own_col = minus_side ? ss.n0 : 0;

  ss.phase_rows = Matrix::Zero(ss.m_own, ss.w);
  for (int r = 0; r < ss.m_own; ++r) {
    for (int c = 0; c < ss.n0; ++c) {
      ss.phase_rows(r, zero_col + c) = sign * fe.Q(own[r], zero[c]);
    }
    for (int c = 0; c < ss.m_own; ++c) {
      ss.phase_rows(r, own_col + c) = sign * fe.Q(own[r], own[c]);
    }
  }
  ss.c_const = Matrix::Zero(ss.n0, ss.w);
  for (int r = 0; r < ss.n0; ++r) {
    for (int c = 0; c < ss.n0; ++c) {
      ss.c_const(r, zero_col + c) = fe.Q(zero[r], zero[c]);
    }
    for (int c = 0; c < ss.m_own; ++c) {
      ss.c_const(r, own_col + c) = fe.Q(zero[r], own[c]);
    }
  }
  ss.b_oth = Matrix::Zero(ss.n0, ss.n_oth);
  ss.t_oth = Matrix::Zero(ss.n_oth, ss.n_oth);
  ss.u_const = Matrix::Zero(ss.n_oth, ss.w);
  for (int r = 0; r < ss.n0; ++r) {
    for (int c = 0; c < ss.n_oth; ++c) ss.b_oth(r, c) = fe.Q(zero[r], oth[c]);
  }
  for (int r = 0; r < ss.n_oth; ++r) {
    for (int c = 0; c < ss.n_oth; ++c) ss.t_oth(r, c) = fe.Q(oth[r], oth[c]);
    for (int c = 0; c < ss.n0; ++c) {
      ss.u_const(r, zero_col + c) = fe.Q(oth[r], zero[c]);
    }
  }
  ss.sig2 = Vector(ss.n0);
  ss.mu = Vector(ss.n0);
  for (int r = 0; r < ss.n0; ++r) {
    ss.sig2(r) = fe.sigma(zero[r]) * fe.sigma(zero[r]);
    ss.mu(r) = fe.v(zero[r]);
  }
  return ss;
}

// Damped Newton on the joint system; quadratically convergent from the
// spectral initializer and globally safeguarded by step halving.
inline void newton_refine(const SideSystem& ss, Matrix& x, Matrix& eta,
                          double target, int max_iters) {
  const int nx = ss.n0 * ss.w;
  const int ne = ss.n_oth * ss.w;
  const auto vec = [](const Matrix& m) {
    Vector v(m.size());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      v.segment(j * m.rows(), m.rows()) = m.col(j);
    }
    return v;
  };
  const auto unvec = [](const Vector& v, int rows, int cols) {
    Matrix m(rows, cols);
    for (int j = 0; j < cols; ++j) m.col(j) = v.segment(j * rows, rows);
    return m;
  };

  Matrix r0, reta;
  double res = ss.residual(x, eta, &r0, &reta);
  for (int it = 0; it < max_iters && res > target; ++it) {
    const Matrix s = ss.assemble(x);
    const Matrix xz = x.middleCols(ss.zero_at, ss.n0);
    Matrix jac = Matrix::Zero(nx + ne, nx + ne);

    // d R0 / d X: (1/2) sig2 (dX S + X_z dX) + mu dX.
    const Matrix half_sig = 0.5 * ss.sig2.asDiagonal().toDenseMatrix();
    const Matrix inner = half_sig * xz + Matrix(ss.mu.asDiagonal());
    for (int cj = 0; cj < ss.w; ++cj) {
      for (int ci = 0; ci < ss.w; ++ci) {
        jac.block(cj * ss.n0, ci * ss.n0, ss.n0, ss.n0) +=
            s(ci, cj) * half_sig;
      }
      jac.block(cj * ss.n0, cj * ss.n0, ss.n0, ss.n0) += inner;
    }
    if (ss.n_oth > 0) {
      // d R0 / d eta: B_oth deta.
      for (int cj = 0; cj < ss.w; ++cj) {
        jac.block(cj * ss.n0, nx + cj * ss.n_oth, ss.n0, ss.n_oth) = ss.b_oth;
      }
      // d Reta / d X: s_oth eta_z dX; eta_z = eta columns at the E0 rows of S.
      const Matrix etaz = eta.middleCols(ss.zero_at, ss.n0);
      for (int cj = 0; cj < ss.w; ++cj) {
        jac.block(nx + cj * ss.n_oth, cj * ss.n0, ss.n_oth, ss.n0) =
            ss.s_oth * etaz;
      }
      // d Reta / d eta: s_oth deta S + T_oth deta.
      for (int cj = 0; cj < ss.w; ++cj) {
        for (int ci = 0; ci < ss.w; ++ci) {
          jac.block(nx + cj * ss.n_oth, nx + ci * ss.n_oth, ss.n_oth,
                    ss.n_oth) +=
              ss.s_oth * s(ci, cj) *
              Matrix::Identity(ss.n_oth, ss.n_oth);
        }
        jac.block(nx + cj * ss.n_oth, nx + cj * ss.n_oth, ss.n_oth,
                  ss.n_oth) += ss.t_oth;
      }
    }

    Vector rhs(nx + ne);
    rhs.head(nx) = -vec(r0);
    if (ne > 0) rhs.tail(ne) = -vec(reta);
    Vector step = jac.partialPivLu().solve(rhs);
    if (!step.allFinite()) break;

    double alpha = 1.0;
    bool accepted = false;
    for (int half = 0; half < 30; ++half) {
      Matrix xt = x + alpha * unvec(step.head(nx), ss.n0, ss.w);
      Matrix et = eta;
      if (ne > 0) et += alpha * unvec(step.tail(ne), ss.n_oth, ss.w);
      Matrix r0t, retat;
      const double rt = ss.residual(xt, et, &r0t, &retat);
      if (rt < res) {
        x = std::move(xt);
        eta = std::move(et);
        r0 = std::move(r0t);
        reta = std::move(retat);
        res = rt;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
}

inline WHFactorization finalize(const FluidEmbedding& fe, Matrix qm,
                                Matrix eta_m, Matrix qp, Matrix eta_p,
                                DriftClass klass, double drift) {
  WHFactorization f;
  f.Qm = sanitize_generator(std::move(qm), 1e-9);
  f.Qp = sanitize_generator(std::move(qp), 1e-9);
  f.eta_minus = clip_nonnegative(std::move(eta_m), 1e-9);
  f.eta_plus = clip_nonnegative(std::move(eta_p), 1e-9);
  for (int r = 0; r < f.eta_minus.rows(); ++r) {
    if (f.eta_minus.row(r).sum() > 1.0 + 1e-9) {
      throw numerical_error("eta- row exceeds probability mass");
    }
  }
  for (int r = 0; r < f.eta_plus.rows(); ++r) {
    if (f.eta_plus.row(r).sum() > 1.0 + 1e-9) {
      throw numerical_error("eta+ row exceeds probability mass");
    }
  }
  f.Wm = assemble_w_minus(fe.states, f.eta_minus);
  f.Wp = assemble_w_plus(fe.states, f.eta_plus);
  f.klass = klass;
  f.stationary_drift = drift;
  const Matrix rp = xi_residual(fe, -f.Qp, f.Wp);
  const Matrix rm = xi_residual(fe, f.Qm, f.Wm);
  f.residual_plus = rp.cwiseAbs().maxCoeff();
  f.residual_minus = rm.cwiseAbs().maxCoeff();
  return f;
}

}  // namespace detail

inline std::pair<double, double> factorization_residuals(
    const FluidEmbedding& fe, const WHFactorization& f) {
  return {xi_residual(fe, -f.Qp, f.Wp).cwiseAbs().maxCoeff(),
          xi_residual(fe, f.Qm, f.Wm).cwiseAbs().maxCoeff()};
}

inline WHFactorization solve_factorization(const FluidEmbedding& fe) {
  double drift = std::numeric_limits<double>::quiet_NaN();
  const DriftClass klass = classify(fe, &drift);
  const StateSpace& st = fe.states;
  const auto m_rows = detail::minus_rows(st);
  const auto p_rows = detail::plus_rows(st);

  const auto spectral_attempt = [&](const FluidEmbedding& femb,
                                    DriftClass kl) {
    SpectralData sd = spectral_roots(femb);
    auto [minus, plus] = detail::split_roots(femb, sd, kl);
    if (detail::side_is_degenerate(minus) ||
        detail::side_is_degenerate(plus)) {
      throw numerical_error("clustered characteristic roots");
    }
    auto qm_eta =
        detail::reconstruct_side(minus, m_rows, st.plus_indices(), false);
    auto qp_eta =
        detail::reconstruct_side(plus, p_rows, st.minus_indices(), true);
    return std::make_pair(qm_eta, qp_eta);
  };

  Matrix qm, eta_m, qp, eta_p;
  bool have_start = false;
  try {
    auto [m_part, p_part] = spectral_attempt(fe, klass);
    std::tie(qm, eta_m) = m_part;
    std::tie(qp, eta_p) = p_part;
    have_start = true;
  } catch (const numerical_error&) {
    // Degenerate spectrum: restart from a slightly killed embedding whose
    // roots are generically simple; Newton then pulls the answer back to the
    // true coefficients.
    for (const double eps : {1e-5, 1e-4, 1e-3}) {
      FluidEmbedding perturbed = fe;
      for (int i = 0; i < st.n_regimes; ++i) {
        const int z = st.zero_index(i);
        perturbed.Q(z, z) -= eps * (1.0 + 0.37 * i);
      }
      perturbed.kill = -perturbed.Q.rowwise().sum();
      try {
        auto [m_part, p_part] =
            spectral_attempt(perturbed, DriftClass::transient);
        std::tie(qm, eta_m) = m_part;
        std::tie(qp, eta_p) = p_part;
        have_start = true;
        break;
      } catch (const numerical_error&) {
      }
    }
  }
  if (!have_start) {
    throw numerical_error(
        "Wiener-Hopf factorization: no usable spectral initializer");
  }

  // Newton polish in the ladder variables; also the solver proper when the
  // start came from a perturbed embedding.
  const detail::SideSystem sys_m = detail::side_system(fe, true);
  const detail::SideSystem sys_p = detail::side_system(fe, false);
  Matrix sp = -qp;
  Matrix xm = qm.topRows(st.n_regimes);
  Matrix xp = sp.bottomRows(st.n_regimes);
  detail::newton_refine(sys_m, xm, eta_m, 1e-12, 60);
  detail::newton_refine(sys_p, xp, eta_p, 1e-12, 60);
  const double res_m = sys_m.residual(xm, eta_m);
  const double res_p = sys_p.residual(xp, eta_p);
  if (std::max(res_m, res_p) > 1e-9) {
    throw numerical_error("Wiener-Hopf residual stalled at " +
                          std::to_string(std::max(res_m, res_p)));
  }
  qm = sys_m.assemble(xm);
  qp = -sys_p.assemble(xp);
  return detail::finalize(fe, qm, eta_m, qp, eta_p, klass, drift);
}

// Second factorization in the non-unique case: exists exactly when the
// unkilled embedding drifts to -infinity.
inline WHFactorization alternate_factorization(const FluidEmbedding& fe,
                                               const WHFactorization& f) {
  if (f.klass != DriftClass::drift_down) {
    throw validation_error(
        "alternate factorization requires a recurrent embedding drifting "
        "to -infinity");
  }
  const int n0p = static_cast<int>(f.Qp.rows());
  Eigen::EigenSolver<Matrix> es(f.Qp.transpose());
  int top = 0;
  for (int i = 1; i < n0p; ++i) {
    if (es.eigenvalues()(i).real() > es.eigenvalues()(top).real()) top = i;
  }
  Vector mu = realify(es.eigenvectors().col(top), 1e-8);
  if (mu.sum() < 0.0) mu = -mu;
  if ((mu.array() < -1e-10).any()) {
    throw numerical_error("left Perron vector of Q+ is not nonnegative");
  }
  mu = mu.cwiseMax(0.0);
  mu /= mu.sum();

  const Matrix proj =
      Matrix::Identity(n0p, n0p) - Vector::Ones(n0p) * mu.transpose();
  Matrix qp = f.Qp * proj;
  Matrix eta_p =
      f.eta_plus * proj + Vector::Ones(f.eta_plus.rows()) * mu.transpose();
  WHFactorization alt =
      detail::finalize(fe, f.Qm, f.eta_minus, std::move(qp), std::move(eta_p),
                       f.klass, f.stationary_drift);
  if (std::max(alt.residual_plus, alt.residual_minus) > 1e-9) {
    throw numerical_error("alternate factorization residual too large");
  }
  return alt;
}

}  // namespace rsjd
