#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <complex>
#include <stdexcept>
#include <string>

namespace rsjd {

/// Input failed structural validation (bad shapes, signs, stochasticity).
struct validation_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A solver failed to reach its documented tolerance or hit a degeneracy.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline Matrix expm(const Matrix& m) { return m.exp(); }

/// Infinity-norm condition estimate via dense LU (sizes here are tiny).
inline double condition_estimate(const Matrix& m) {
  if (m.rows() == 0) return 1.0;
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible()) return std::numeric_limits<double>::infinity();
  return m.cwiseAbs().rowwise().sum().maxCoeff() *
         lu.inverse().cwiseAbs().rowwise().sum().maxCoeff();
}

/// Largest |imaginary part| of a complex matrix, used to certify that a
/// spectral reconstruction is real up to roundoff.
inline double max_imag(const CMatrix& m) {
  return m.rows() == 0 ? 0.0 : m.imag().cwiseAbs().maxCoeff();
}

/// Asserts the imaginary part is below tol * scale and drops it.
inline Matrix realify(const CMatrix& m, double tol = 1e-10) {
  const double scale = std::max(1.0, m.rows() == 0 ? 0.0 : m.cwiseAbs().maxCoeff());
  if (max_imag(m) > tol * scale)
    throw numerical_error("complex residue " + std::to_string(max_imag(m)) +
                          " exceeds realification tolerance");
  return m.real();
}

/// Verifies M is a (sub-)generator up to `tol` and returns a cleaned copy:
/// off-diagonal entries in [-tol, 0) are clipped to zero and row sums in
/// (0, tol] are folded into the diagonal. Anything worse throws.
inline Matrix sanitize_generator(Matrix m, double tol = 1e-12) {
  const double scale = std::max(1.0, m.rows() == 0 ? 0.0 : m.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i == j) continue;
      if (m(i, j) < 0) {
        if (m(i, j) < -tol * scale)
          throw numerical_error("generator entry (" + std::to_string(i) + "," +
                                std::to_string(j) + ") = " + std::to_string(m(i, j)) +
                                " below clip threshold");
        m(i, j) = 0.0;
      }
    }
    const double rs = m.row(i).sum();
    if (rs > 0) {
      if (rs > tol * scale)
        throw numerical_error("generator row " + std::to_string(i) +
                              " sums to " + std::to_string(rs));
      m(i, i) -= rs;
    }
  }
  return m;
}

/// Clips entries of a nonnegative (sub-probability) matrix: values in
/// [-tol, 0) become zero, more negative ones throw.
inline Matrix clip_nonnegative(Matrix m, double tol = 1e-12) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (m(i, j) < 0) {
        if (m(i, j) < -tol)
          throw numerical_error("matrix entry (" + std::to_string(i) + "," +
                                std::to_string(j) + ") = " + std::to_string(m(i, j)) +
                                " is negative beyond tolerance");
        m(i, j) = 0.0;
      }
  return m;
}

/// Solves A X M + B X = C for X by Kronecker vectorization; all blocks are
/// desk-scale so the dense solve is adequate.
inline Matrix solve_bilinear(const Matrix& a, const Matrix& m, const Matrix& b,
                             const Matrix& c) {
  const Eigen::Index r = c.rows(), s = c.cols();
  if (r == 0 || s == 0) return Matrix::Zero(r, s);
  Matrix big = Matrix::Zero(r * s, r * s);
  // vec is column-major: vec(AXM) = (M' (x) A) vec(X), vec(BX) = (I (x) B) vec(X).
  for (Eigen::Index j = 0; j < s; ++j)
    for (Eigen::Index i = 0; i < s; ++i)
      big.block(j * r, i * r, r, r) += m(i, j) * a;
  for (Eigen::Index j = 0; j < s; ++j) big.block(j * r, j * r, r, r) += b;
  Eigen::VectorXd vc(r * s);
  for (Eigen::Index j = 0; j < s; ++j) vc.segment(j * r, r) = c.col(j);
  Eigen::VectorXd vx = big.partialPivLu().solve(vc);
  Matrix x(r, s);
  for (Eigen::Index j = 0; j < s; ++j) x.col(j) = vx.segment(j * r, r);
  return x;
}

}  // namespace rsjd
