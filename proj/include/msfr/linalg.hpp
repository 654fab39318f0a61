#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "msfr/errors.hpp"

namespace msfr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative pivot threshold below which linear solves report SingularSystem.
inline constexpr double kSingularTol = 1e-12;

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Stacks the columns of a matrix into one vector.
inline Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

inline Matrix unvec(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols)
    throw ShapeMismatch("unvec: vector length " + std::to_string(v.size()) +
                        " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

/// Dense LU solve with an explicit singularity guard. Used for the stacked
/// vec-form loading update and everywhere else a square system appears.
inline Vector solve_kron_system(const Matrix& coef, const Vector& rhs) {
  if (coef.rows() != coef.cols())
    throw ShapeMismatch("solve_kron_system: coefficient matrix must be square");
  if (coef.rows() != rhs.size())
    throw ShapeMismatch("solve_kron_system: rhs length does not match system size");
  if (coef.size() == 0) return Vector(0);

  Eigen::PartialPivLU<Matrix> lu(coef);
  const Vector d = lu.matrixLU().diagonal().cwiseAbs();
  const double scale = d.maxCoeff();
  if (scale <= 0.0 || !(d.minCoeff() > kSingularTol * scale))
    throw SingularSystem("solve_kron_system: pivot below relative tolerance");
  return lu.solve(rhs);
}

inline Matrix solve_square(const Matrix& coef, const Matrix& rhs) {
  if (coef.size() == 0) return Matrix(0, rhs.cols());
  Eigen::PartialPivLU<Matrix> lu(coef);
  const Vector d = lu.matrixLU().diagonal().cwiseAbs();
  const double scale = d.maxCoeff();
  if (scale <= 0.0 || !(d.minCoeff() > kSingularTol * scale))
    throw SingularSystem("solve_square: pivot below relative tolerance");
  return lu.solve(rhs);
}

/// (L L^T + diag(psi))^-1 via the low-rank inversion identity. Only the
/// k x k core is factorized; no dense p x p inverse is ever taken.
inline Matrix woodbury_inverse(const Vector& psi, const Matrix& l) {
  const Index p = psi.size();
  if (l.rows() != p)
    throw ShapeMismatch("woodbury_inverse: loading rows do not match psi dimension");
  if (!(psi.minCoeff() > 0.0))
    throw DegenerateInput("woodbury_inverse: psi entries must be positive");

  const Vector psi_inv = psi.cwiseInverse();
  const Index k = l.cols();
  if (k == 0) return psi_inv.asDiagonal();

  const Matrix pi_l = psi_inv.asDiagonal() * l;                    // p x k
  Matrix core = Matrix::Identity(k, k) + l.transpose() * pi_l;     // k x k
  Eigen::LDLT<Matrix> ldlt(core);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > kSingularTol))
    throw SingularSystem("woodbury_inverse: core matrix is numerically singular");
  Matrix w = Matrix(psi_inv.asDiagonal());
  w.noalias() -= pi_l * ldlt.solve(pi_l.transpose());
  return w;
}

/// Varimax simplicity criterion of a loading matrix, evaluated on
/// Kaiser-normalized rows (the quantity the rotation sweep maximizes).
inline double varimax_criterion(const Matrix& l) {
  const Index p = l.rows();
  if (p == 0 || l.cols() == 0) return 0.0;
  Vector h = l.rowwise().norm();
  for (Index i = 0; i < p; ++i)
    if (h(i) == 0.0) h(i) = 1.0;
  const Matrix w = h.cwiseInverse().asDiagonal() * l;
  const Matrix w2 = w.cwiseProduct(w);
  double v = 0.0;
  for (Index j = 0; j < w2.cols(); ++j) {
    const double m4 = w2.col(j).squaredNorm() / static_cast<double>(p);
    const double m2 = w2.col(j).mean();
    v += m4 - m2 * m2;
  }
  return v;
}

struct VarimaxResult {
  Matrix rotated;   // l * rotation
  Matrix rotation;  // orthogonal k x k
};

/// Kaiser's pairwise planar-rotation sweep with Kaiser row normalization.
/// Sweeps until the largest rotation angle in a pass is negligible (the
/// criterion improvement is then far below 1e-7) or `max_sweeps` passes.
/// The criterion is non-decreasing throughout, and the returned rotation is
/// a fixed point of the sweep, so rotating a second time changes nothing.
inline VarimaxResult varimax(const Matrix& l, int max_sweeps = 1000) {
  const Index p = l.rows();
  const Index k = l.cols();
  if (k <= 1) return {l, Matrix::Identity(k, k)};

  Vector h = l.rowwise().norm();
  for (Index i = 0; i < p; ++i)
    if (h(i) == 0.0) h(i) = 1.0;
  Matrix w = h.cwiseInverse().asDiagonal() * l;
  Matrix rot = Matrix::Identity(k, k);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_angle = 0.0;
    for (Index a = 0; a + 1 < k; ++a) {
      for (Index b = a + 1; b < k; ++b) {
        const Vector u = w.col(a).cwiseProduct(w.col(a)) - w.col(b).cwiseProduct(w.col(b));
        const Vector v2 = 2.0 * w.col(a).cwiseProduct(w.col(b));
        const double su = u.sum();
        const double sv = v2.sum();
        const double num = 2.0 * u.dot(v2) - 2.0 * su * sv / static_cast<double>(p);
        const double den =
            u.squaredNorm() - v2.squaredNorm() - (su * su - sv * sv) / static_cast<double>(p);
        if (num == 0.0 && den == 0.0) continue;
        const double angle = 0.25 * std::atan2(num, den);
        max_angle = std::max(max_angle, std::abs(angle));
        if (std::abs(angle) < 1e-14) continue;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const Vector wa = w.col(a);
        w.col(a) = c * wa + s * w.col(b);
        w.col(b) = -s * wa + c * w.col(b);
        const Vector ra = rot.col(a);
        rot.col(a) = c * ra + s * rot.col(b);
        rot.col(b) = -s * ra + c * rot.col(b);
      }
    }
    if (max_angle < 1e-10) break;
  }
  return {l * rot, rot};
}

/// Similarity of two configurations with shared rows, computed on the
/// cross-products A A^T and B B^T; invariant to column permutation, sign
/// flips and orthogonal rotation of either argument.
inline double rv_coefficient(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw ShapeMismatch("rv_coefficient: row counts differ");
  // Evaluated on the explicit cross-products so the value is exactly
  // symmetric in the two arguments.
  const Matrix sa = a * a.transpose();
  const Matrix sb = b * b.transpose();
  const double cross = sa.cwiseProduct(sb).sum();
  const double na = sa.squaredNorm();
  const double nb = sb.squaredNorm();
  if (na <= 0.0 || nb <= 0.0)
    throw DegenerateInput("rv_coefficient: zero cross-product");
  return std::min(1.0, cross / std::sqrt(na * nb));
}

/// RV similarity of two symmetric matrices compared directly (used for
/// covariance matrices, which are already cross-product shaped).
inline double rv_coefficient_sym(const Matrix& sa, const Matrix& sb) {
  if (sa.rows() != sb.rows() || sa.cols() != sb.cols() || sa.rows() != sa.cols())
    throw ShapeMismatch("rv_coefficient_sym: inputs must be square with equal size");
  const double cross = sa.cwiseProduct(sb).sum();
  const double na = sa.squaredNorm();
  const double nb = sb.squaredNorm();
  if (na <= 0.0 || nb <= 0.0)
    throw DegenerateInput("rv_coefficient_sym: zero matrix");
  return std::min(1.0, cross / std::sqrt(na * nb));
}

}  // namespace msfr
