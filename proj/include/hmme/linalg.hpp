#ifndef HMME_LINALG_HPP
#define HMME_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "hmme/error.hpp"

namespace hmme {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace linalg {

/// Relative cutoff below which symmetric eigenvalues count as zero.
inline constexpr double kPinvRelTol = 1e-12;

inline MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

/// Moore-Penrose inverse of a symmetric matrix through its eigendecomposition.
/// Eigenvalues with |lambda| <= rel_tol * max|lambda| are treated as zero.
inline MatrixXd sym_pinv(const MatrixXd& a, double rel_tol = kPinvRelTol, Index* rank = nullptr) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a));
  const VectorXd& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  const double cut = rel_tol * top;
  VectorXd inv = VectorXd::Zero(ev.size());
  Index k = 0;
  for (Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i)) > cut && top > 0.0) {
      inv(i) = 1.0 / ev(i);
      ++k;
    }
  }
  if (rank != nullptr) *rank = k;
  const MatrixXd& u = es.eigenvectors();
  return symmetrize(u * inv.asDiagonal() * u.transpose());
}

/// Inverse of a symmetric positive definite matrix; throws SingularMatrix otherwise.
inline MatrixXd spd_inverse(const MatrixXd& a, const char* what = "matrix") {
  Eigen::LLT<MatrixXd> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularMatrix, std::string(what) + " is not positive definite");
  }
  return symmetrize(llt.solve(MatrixXd::Identity(a.rows(), a.cols())));
}

/// Smallest and largest eigenvalue of a symmetric matrix.
inline std::pair<double, double> eigen_range(const MatrixXd& a) {
  if (a.size() == 0) return {0.0, 0.0};
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

/// Orthonormal basis (columns) of the column space of `a`, via SVD.
inline MatrixXd column_basis(const MatrixXd& a, double rel_tol = kPinvRelTol) {
  Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinU);
  const VectorXd& sv = svd.singularValues();
  const double cut = sv.size() > 0 ? rel_tol * sv(0) : 0.0;
  Index k = 0;
  while (k < sv.size() && sv(k) > cut && sv(k) > 0.0) ++k;
  return svd.matrixU().leftCols(k);
}

inline Index matrix_rank(const MatrixXd& a, double rel_tol = kPinvRelTol) {
  return column_basis(a, rel_tol).cols();
}

/// log|a| for symmetric positive definite `a`.
inline double spd_logdet(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularMatrix, "log-determinant of a non positive definite matrix");
  }
  const auto& l = llt.matrixL();
  double s = 0.0;
  for (Index i = 0; i < a.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

inline double max_abs(const MatrixXd& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace linalg
}  // namespace hmme

#endif  // HMME_LINALG_HPP
