#ifndef HMME_MODEL_HPP
#define HMME_MODEL_HPP

#include <cmath>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "hmme/error.hpp"
#include "hmme/linalg.hpp"

namespace hmme {

/// Simple linear mixed model y = X b + sum_i Z_i u_i + e with
/// var(u_i) = sigma2_i I and var(e) = sigma2_{s+1} I.
///
/// Holds the response, the fixed design and the ordered random design blocks,
/// plus the labels used to report fixed columns and random levels. The
/// constructor only stores; call validate_spec() before fitting.
class LmmSpec {
 public:
  LmmSpec() = default;

  LmmSpec(VectorXd y, MatrixXd x, std::vector<MatrixXd> z_blocks,
          std::vector<std::string> fixed_labels = {},
          std::vector<std::string> factor_names = {},
          std::vector<std::vector<std::string>> level_labels = {})
      : y_(std::move(y)),
        x_(std::move(x)),
        z_blocks_(std::move(z_blocks)),
        fixed_labels_(std::move(fixed_labels)),
        factor_names_(std::move(factor_names)),
        level_labels_(std::move(level_labels)) {
    offsets_.push_back(0);
    for (const auto& zb : z_blocks_) offsets_.push_back(offsets_.back() + zb.cols());
    if (fixed_labels_.empty()) {
      for (Index j = 0; j < x_.cols(); ++j) fixed_labels_.push_back("x" + std::to_string(j + 1));
    }
    if (factor_names_.empty()) {
      for (std::size_t i = 0; i < z_blocks_.size(); ++i) factor_names_.push_back("u" + std::to_string(i + 1));
    }
    if (level_labels_.empty()) {
      for (const auto& zb : z_blocks_) {
        std::vector<std::string> lv;
        for (Index k = 0; k < zb.cols(); ++k) lv.push_back(std::to_string(k + 1));
        level_labels_.push_back(std::move(lv));
      }
    }
    // Concatenation only makes sense when the row counts agree; validate_spec reports otherwise.
    bool rows_agree = true;
    for (const auto& zb : z_blocks_) rows_agree = rows_agree && zb.rows() == x_.rows();
    if (rows_agree) {
      z_ = MatrixXd::Zero(x_.rows(), offsets_.back());
      for (std::size_t i = 0; i < z_blocks_.size(); ++i) {
        z_.middleCols(offsets_[i], z_blocks_[i].cols()) = z_blocks_[i];
      }
    }
  }

  const VectorXd& y() const { return y_; }
  const MatrixXd& X() const { return x_; }
  const MatrixXd& Z() const { return z_; }
  const std::vector<MatrixXd>& z_blocks() const { return z_blocks_; }
  const MatrixXd& z_block(Index i) const { return z_blocks_[static_cast<std::size_t>(i)]; }

  Index n() const { return x_.rows(); }
  Index p() const { return x_.cols(); }
  Index s() const { return static_cast<Index>(z_blocks_.size()); }
  Index r() const { return offsets_.empty() ? 0 : offsets_.back(); }
  Index r_i(Index i) const { return z_blocks_[static_cast<std::size_t>(i)].cols(); }
  /// Start of block i inside u (0-based, excludes the p fixed columns).
  Index offset(Index i) const { return offsets_[static_cast<std::size_t>(i)]; }

  const std::vector<std::string>& fixed_labels() const { return fixed_labels_; }
  const std::vector<std::string>& factor_names() const { return factor_names_; }
  const std::vector<std::vector<std::string>>& level_labels() const { return level_labels_; }

  /// Same design, different response.
  LmmSpec with_response(VectorXd y) const {
    LmmSpec copy = *this;
    copy.y_ = std::move(y);
    return copy;
  }

 private:
  VectorXd y_;
  MatrixXd x_;
  std::vector<MatrixXd> z_blocks_;
  MatrixXd z_;
  std::vector<Index> offsets_;
  std::vector<std::string> fixed_labels_;
  std::vector<std::string> factor_names_;
  std::vector<std::vector<std::string>> level_labels_;
};

/// sigma2 = (sigma2_1, ..., sigma2_s, sigma2_{s+1}); the last entry is the error variance.
class VarComponents {
 public:
  explicit VarComponents(VectorXd sigma2) : v_(std::move(sigma2)) {
    if (v_.size() < 2) {
      throw Error(ErrorCode::InvalidArgument, "variance components need at least one random factor and the error");
    }
    for (Index i = 0; i < v_.size(); ++i) {
      if (!std::isfinite(v_(i)) || v_(i) <= 0.0) {
        throw Error(ErrorCode::InvalidArgument,
                    "variance component " + std::to_string(i + 1) + " must be strictly positive");
      }
    }
  }

  VarComponents(std::initializer_list<double> values)
      : VarComponents(VectorXd::Map(values.begin(), static_cast<Index>(values.size()))) {}

  Index size() const { return v_.size(); }
  Index s() const { return v_.size() - 1; }
  double operator[](Index i) const { return v_(i); }
  double error_variance() const { return v_(v_.size() - 1); }
  const VectorXd& values() const { return v_; }

  VarComponents scaled(double factor) const { return VarComponents(VectorXd(v_ * factor)); }

 private:
  VectorXd v_;
};

/// Coefficients of w = K'b + L'u; Lambda = (K', L')' has full column rank q.
class ContrastSet {
 public:
  ContrastSet(MatrixXd k, MatrixXd l) : k_(std::move(k)), l_(std::move(l)) {
    if (k_.cols() < 1 || k_.cols() != l_.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "K and L must have the same number q >= 1 of columns");
    }
    lambda_.resize(k_.rows() + l_.rows(), k_.cols());
    lambda_ << k_, l_;
    if (linalg::matrix_rank(lambda_, 1e-10) != q()) {
      throw Error(ErrorCode::InvalidArgument, "contrast matrix Lambda must have full column rank");
    }
  }

  /// Single linear function lambda = (k', l')'.
  static ContrastSet single(const VectorXd& k, const VectorXd& l) {
    return ContrastSet(MatrixXd(k), MatrixXd(l));
  }

  static ContrastSet from_lambda(const MatrixXd& lambda, Index p) {
    return ContrastSet(lambda.topRows(p), lambda.bottomRows(lambda.rows() - p));
  }

  const MatrixXd& K() const { return k_; }
  const MatrixXd& L() const { return l_; }
  const MatrixXd& Lambda() const { return lambda_; }
  Index q() const { return k_.cols(); }

 private:
  MatrixXd k_;
  MatrixXd l_;
  MatrixXd lambda_;
};

/// Returns the spec unchanged when every structural invariant holds, throws otherwise.
inline const LmmSpec& validate_spec(const LmmSpec& spec) {
  if (spec.p() < 1) throw Error(ErrorCode::EmptyDesign, "fixed design X has no columns");
  if (spec.s() < 1) throw Error(ErrorCode::EmptyDesign, "model has no random factor");
  for (Index i = 0; i < spec.s(); ++i) {
    if (spec.z_block(i).rows() != spec.n()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "random block " + std::to_string(i + 1) + " has " + std::to_string(spec.z_block(i).rows()) +
                      " rows, X has " + std::to_string(spec.n()));
    }
    if (spec.r_i(i) < 1) {
      throw Error(ErrorCode::EmptyDesign, "random block " + std::to_string(i + 1) + " has no columns");
    }
  }
  if (spec.y().size() != spec.n()) {
    throw Error(ErrorCode::DimensionMismatch, "response length differs from the number of design rows");
  }
  if (spec.n() < 2) throw Error(ErrorCode::Degenerate, "at least two observations are required");
  if (!spec.X().allFinite() || !spec.Z().allFinite() || !spec.y().allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "design or response contains non-finite values");
  }
  if (spec.X().cwiseAbs().maxCoeff() == 0.0) {
    throw Error(ErrorCode::Degenerate, "fixed design X is identically zero");
  }
  for (Index i = 0; i < spec.s(); ++i) {
    if (spec.z_block(i).cwiseAbs().maxCoeff() == 0.0) {
      throw Error(ErrorCode::Degenerate, "random block " + std::to_string(i + 1) + " is identically zero");
    }
  }
  if (static_cast<Index>(spec.fixed_labels().size()) != spec.p() ||
      static_cast<Index>(spec.factor_names().size()) != spec.s() ||
      static_cast<Index>(spec.level_labels().size()) != spec.s()) {
    throw Error(ErrorCode::DimensionMismatch, "label lists do not match the design");
  }
  for (Index i = 0; i < spec.s(); ++i) {
    if (static_cast<Index>(spec.level_labels()[static_cast<std::size_t>(i)].size()) != spec.r_i(i)) {
      throw Error(ErrorCode::DimensionMismatch, "level labels do not match random block " + std::to_string(i + 1));
    }
  }
  return spec;
}

inline constexpr double kEstimabilityTol = 1e-8;

/// True iff every column of K lies in the row space of X: the residual of
/// projecting K onto rowspace(X) has norm <= tol * ||K||_F, column by column.
inline bool check_estimability(const MatrixXd& k, const MatrixXd& x, double tol = kEstimabilityTol) {
  if (!(tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "estimability tolerance must be positive");
  if (k.rows() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "K must have as many rows as X has columns");
  const MatrixXd basis = linalg::column_basis(x.transpose());
  const MatrixXd resid = k - basis * (basis.transpose() * k);
  const double bound = tol * k.norm();
  for (Index j = 0; j < k.cols(); ++j) {
    if (resid.col(j).norm() > bound) return false;
  }
  return true;
}

inline void require_estimable(const MatrixXd& k, const MatrixXd& x) {
  if (!check_estimability(k, x)) {
    throw Error(ErrorCode::NonEstimableContrast, "K'b is not estimable (K is not in the row space of X)");
  }
}

}  // namespace hmme

#endif  // HMME_MODEL_HPP
