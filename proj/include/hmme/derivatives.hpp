#ifndef HMME_DERIVATIVES_HPP
#define HMME_DERIVATIVES_HPP

#include <cmath>
#include <string>
#include <vector>

#include "hmme/error.hpp"
#include "hmme/linalg.hpp"
#include "hmme/mme.hpp"
#include "hmme/model.hpp"

namespace hmme {

// Derivatives of an inverse A = B^-1 with respect to scalar parameters, given
// the derivatives of B. Each operator first checks ||A B - I|| <= 1e-8.

namespace detail {

inline void require_inverse(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != a.cols() || a.rows() != b.rows() || b.rows() != b.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "A and B must be square and of equal size");
  }
  const double err = (a * b - MatrixXd::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff();
  if (!(err <= 1e-8)) {
    throw Error(ErrorCode::InconsistentInverse, "A is not the inverse of B (max |AB - I| = " + std::to_string(err) + ")");
  }
}

}  // namespace detail

/// dA/di = -A B_i A.
inline MatrixXd inverse_derivative_1(const MatrixXd& a, const MatrixXd& b, const MatrixXd& b_i) {
  detail::require_inverse(a, b);
  return -a * b_i * a;
}

/// d2A/didj = A (B_i A B_j + B_j A B_i - B_ij) A.
inline MatrixXd inverse_derivative_2(const MatrixXd& a, const MatrixXd& b, const MatrixXd& b_i, const MatrixXd& b_j,
                                     const MatrixXd& b_ij) {
  detail::require_inverse(a, b);
  return a * (b_i * a * b_j + b_j * a * b_i - b_ij) * a;
}

/// Third derivative d3A/didjdk, obtained by differentiating the second-order
/// operator once more in k.
inline MatrixXd inverse_derivative_3(const MatrixXd& a, const MatrixXd& b, const MatrixXd& b_i, const MatrixXd& b_j,
                                     const MatrixXd& b_k, const MatrixXd& b_ij, const MatrixXd& b_ik,
                                     const MatrixXd& b_jk, const MatrixXd& b_ijk) {
  detail::require_inverse(a, b);
  const MatrixXd n = b_i * a * b_j + b_j * a * b_i - b_ij;
  const MatrixXd akb = a * b_k * a;
  const MatrixXd inner = b_i * a * b_jk + b_ik * a * b_j + b_j * a * b_ik + b_jk * a * b_i -
                         b_i * akb * b_j - b_j * akb * b_i - b_ijk;
  return -a * n * akb - akb * n * a + a * inner * a;
}

/// Derivatives of H with respect to sigma2_1..sigma2_{s+1}.
///
/// H = H0 / sigma2_{s+1} + sum_i Delta_i / sigma2_i, where Delta_i picks the
/// u_i block and Delta_{s+1} = H0, so every derivative is a multiple of one
/// Delta and mixed derivatives vanish.
class HDerivatives {
 public:
  HDerivatives(const LmmSpec& spec, const VarComponents& vc) : sigma2_(vc.values()) {
    detail::require_components(spec, vc);
    const Index dim = spec.p() + spec.r();
    for (Index i = 0; i < spec.s(); ++i) {
      MatrixXd d = MatrixXd::Zero(dim, dim);
      d.diagonal().segment(spec.p() + spec.offset(i), spec.r_i(i)).setOnes();
      delta_.push_back(std::move(d));
    }
    delta_.push_back(assemble_h0(spec));
  }

  Index count() const { return static_cast<Index>(delta_.size()); }
  const MatrixXd& delta(Index i) const { return delta_[static_cast<std::size_t>(i)]; }

  MatrixXd first(Index i) const { return -delta(i) / std::pow(sigma2_(i), 2); }

  MatrixXd second(Index i, Index j) const {
    if (i != j) return MatrixXd::Zero(delta(i).rows(), delta(i).cols());
    return 2.0 * delta(i) / std::pow(sigma2_(i), 3);
  }

  MatrixXd third(Index i, Index j, Index k) const {
    if (i != j || j != k) return MatrixXd::Zero(delta(i).rows(), delta(i).cols());
    return -6.0 * delta(i) / std::pow(sigma2_(i), 4);
  }

 private:
  VectorXd sigma2_;
  std::vector<MatrixXd> delta_;
};

inline HDerivatives h_derivs(const LmmSpec& spec, const VarComponents& vc) { return HDerivatives(spec, vc); }

/// C^(i) = C Delta_i C / sigma2_i^2.
inline MatrixXd c_first(const HDerivatives& hd, const MmeSolution& sol, Index i) {
  const double si = sol.sigma2_used[i];
  return linalg::symmetrize(sol.C * hd.delta(i) * sol.C / (si * si));
}

/// C^(i,j) in closed form.
inline MatrixXd c_second(const HDerivatives& hd, const MmeSolution& sol, Index i, Index j) {
  const MatrixXd& c = sol.C;
  const double si = sol.sigma2_used[i];
  if (i == j) {
    const MatrixXd cdc = c * hd.delta(i) * c;
    return linalg::symmetrize(2.0 / std::pow(si, 4) * cdc * hd.delta(i) * c - 2.0 / std::pow(si, 3) * cdc);
  }
  const double sj = sol.sigma2_used[j];
  const MatrixXd a = c * hd.delta(i) * c * hd.delta(j) * c;
  return linalg::symmetrize((a + a.transpose()) / std::pow(si * sj, 2));
}

/// C^(i,j,k) through the generic third-order operator; needs H nonsingular.
inline MatrixXd c_third(const LmmSpec& spec, const HDerivatives& hd, const MmeSolution& sol, Index i, Index j,
                        Index k) {
  const MatrixXd h = assemble_h(spec, sol.sigma2_used);
  return inverse_derivative_3(sol.C, h, hd.first(i), hd.first(j), hd.first(k), hd.second(i, j), hd.second(i, k),
                              hd.second(j, k), hd.third(i, j, k));
}

/// First and second derivatives of M = Lambda' C Lambda plus the EBLUP MSE correction.
struct DerivBundle {
  MatrixXd lambda_tilde;  // C Lambda
  MatrixXd M;
  std::vector<MatrixXd> grad;               // M^(i), i = 1..s+1
  std::vector<std::vector<MatrixXd>> hess;  // M^(i,j), filled symmetric
  MatrixXd m_delta;                         // sum_ij Sigma_ij CC_ij
  std::vector<Index> offsets;               // block starts in lambda_tilde; offsets[0] = 0 is the fixed block

  /// Block 0 is the fixed part (p x q), block i >= 1 the rows of random factor i.
  MatrixXd lambda_block(Index i) const {
    const auto k = static_cast<std::size_t>(i);
    return lambda_tilde.middleRows(offsets[k], offsets[k + 1] - offsets[k]);
  }
};

namespace detail {

inline void require_sigma(const MatrixXd& sigma, Index s) {
  if (sigma.rows() != s + 1 || sigma.cols() != s + 1) {
    throw Error(ErrorCode::DimensionMismatch, "Sigma must be (s+1) x (s+1) = " + std::to_string(s + 1) + " square");
  }
  if (!sigma.allFinite() || (sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + linalg::max_abs(sigma))) {
    throw Error(ErrorCode::InvalidArgument, "Sigma must be finite and symmetric");
  }
}

/// E_i = Delta_i Lambda~ for every i = 1..s+1.
inline std::vector<MatrixXd> delta_lambda(const LmmSpec& spec, const MatrixXd& lt) {
  std::vector<MatrixXd> e;
  for (Index i = 0; i < spec.s(); ++i) {
    MatrixXd ei = MatrixXd::Zero(lt.rows(), lt.cols());
    const Index row = spec.p() + spec.offset(i);
    ei.middleRows(row, spec.r_i(i)) = lt.middleRows(row, spec.r_i(i));
    e.push_back(std::move(ei));
  }
  e.push_back(assemble_h0(spec) * lt);
  return e;
}

inline std::vector<Index> bundle_offsets(const LmmSpec& spec) {
  std::vector<Index> off{0, spec.p()};
  for (Index i = 0; i < spec.s(); ++i) off.push_back(off.back() + spec.r_i(i));
  return off;
}

/// C H_V C = blockdiag(C11, G - C22).
inline MatrixXd chvc(const LmmSpec& spec, const MmeSolution& sol) {
  const Index p = spec.p();
  const Index r = spec.r();
  MatrixXd q = MatrixXd::Zero(p + r, p + r);
  q.topLeftCorner(p, p) = sol.C11();
  q.bottomRightCorner(r, r) = -sol.C22();
  q.bottomRightCorner(r, r).diagonal() += g_diagonal(spec, sol.sigma2_used);
  return q;
}

}  // namespace detail

/// M^(i) for i = 1..s+1: Lambda~_i'Lambda~_i / sigma2_i^2 and Lambda~'H0 Lambda~ / sigma2_{s+1}^2.
inline std::vector<MatrixXd> mse_gradient(const LmmSpec& spec, const MmeSolution& sol, const MatrixXd& lambda) {
  const MatrixXd lt = sol.C * lambda;
  const auto e = detail::delta_lambda(spec, lt);
  std::vector<MatrixXd> grad;
  for (Index i = 0; i <= spec.s(); ++i) {
    const double si = sol.sigma2_used[i];
    grad.push_back(linalg::symmetrize(lt.transpose() * e[static_cast<std::size_t>(i)] / (si * si)));
  }
  return grad;
}

/// Covariance blocks CC_ij = cov(d(w~ - w)/d sigma2_i, d(w~ - w)/d sigma2_j), i, j = 1..s+1.
inline std::vector<std::vector<MatrixXd>> correction_blocks(const LmmSpec& spec, const MmeSolution& sol,
                                                            const ContrastSet& contrast) {
  require_estimable(contrast.K(), spec.X());
  const MatrixXd& lam = contrast.Lambda();
  const MatrixXd lt = sol.C * lam;
  const auto e = detail::delta_lambda(spec, lt);
  const MatrixXd q = detail::chvc(spec, sol);
  const Index last = spec.s();
  const double se = sol.sigma2_used.error_variance();
  const MatrixXd q_lam = q * lam;

  std::vector<std::vector<MatrixXd>> cc(static_cast<std::size_t>(last + 1));
  for (Index i = 0; i <= last; ++i) {
    const MatrixXd& ei = e[static_cast<std::size_t>(i)];
    const MatrixXd qei = q * ei;
    for (Index j = 0; j <= last; ++j) {
      const MatrixXd& ej = e[static_cast<std::size_t>(j)];
      MatrixXd block = ei.transpose() * q * ej;
      if (i == last) block -= se * q_lam.transpose() * ej;
      if (j == last) block -= se * qei.transpose() * lam;
      if (i == last && j == last) block += se * se * lam.transpose() * q_lam;
      const double si = sol.sigma2_used[i];
      const double sj = sol.sigma2_used[j];
      cc[static_cast<std::size_t>(i)].push_back(block / std::pow(si * sj, 2));
    }
  }
  return cc;
}

/// Lambda~, M, its first and second derivatives, and the MSE correction for the
/// variance-covariance matrix `sigma` of the variance-component estimator.
///
/// The correction is formed from the CC_ij blocks and cross-checked against
/// -1/2 sum Sigma_ij M^(i,j); disagreement beyond 1e-9 (1 + ||.||) throws
/// RouteDisagreement.
inline DerivBundle mse_bundle(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                              const MatrixXd& sigma) {
  require_estimable(contrast.K(), spec.X());
  detail::require_sigma(sigma, spec.s());
  const Index last = spec.s();
  const MatrixXd lt = sol.C * contrast.Lambda();
  const auto e = detail::delta_lambda(spec, lt);

  DerivBundle out;
  out.lambda_tilde = lt;
  out.M = linalg::symmetrize(contrast.Lambda().transpose() * lt);
  out.offsets = detail::bundle_offsets(spec);
  for (Index i = 0; i <= last; ++i) {
    const double si = sol.sigma2_used[i];
    out.grad.push_back(linalg::symmetrize(lt.transpose() * e[static_cast<std::size_t>(i)] / (si * si)));
  }

  // upper triangle, mirrored
  out.hess.assign(static_cast<std::size_t>(last + 1), std::vector<MatrixXd>(static_cast<std::size_t>(last + 1)));
  for (Index i = 0; i <= last; ++i) {
    const MatrixXd& ei = e[static_cast<std::size_t>(i)];
    const MatrixXd c_ei = sol.C * ei;
    const double si = sol.sigma2_used[i];
    for (Index j = i; j <= last; ++j) {
      const MatrixXd& ej = e[static_cast<std::size_t>(j)];
      MatrixXd h;
      if (i == j) {
        h = 2.0 / std::pow(si, 4) * (ei.transpose() * c_ei - si * lt.transpose() * ei);
      } else {
        const MatrixXd a = c_ei.transpose() * ej;
        h = (a + a.transpose()) / std::pow(si * sol.sigma2_used[j], 2);
      }
      h = linalg::symmetrize(h);
      out.hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = h;
      out.hess[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = h;
    }
  }

  const auto cc = correction_blocks(spec, sol, contrast);
  const Index q = contrast.q();
  MatrixXd via_cc = MatrixXd::Zero(q, q);
  MatrixXd via_hess = MatrixXd::Zero(q, q);
  for (Index i = 0; i <= last; ++i) {
    for (Index j = 0; j <= last; ++j) {
      via_cc += sigma(i, j) * cc[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      via_hess += sigma(i, j) * out.hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  via_cc = linalg::symmetrize(via_cc);
  via_hess = linalg::symmetrize(-0.5 * via_hess);
  const double gap = (via_cc - via_hess).norm();
  if (!(gap <= 1e-9 * (1.0 + via_cc.norm()))) {
    throw Error(ErrorCode::RouteDisagreement,
                "MSE correction routes disagree by " + std::to_string(gap) + " (internal consistency failure)");
  }
  out.m_delta = via_cc;
  return out;
}

/// True iff M^(i,i) = -2 CC_ii and M^(i,j) = -(CC_ij + CC_ji) hold entrywise to 1e-9.
inline bool cross_derivative_identity_check(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast) {
  const Index last = spec.s();
  const auto bundle = mse_bundle(spec, sol, contrast, MatrixXd::Zero(last + 1, last + 1));
  const auto cc = correction_blocks(spec, sol, contrast);
  for (Index i = 0; i <= last; ++i) {
    for (Index j = 0; j <= last; ++j) {
      const auto a = static_cast<std::size_t>(i);
      const auto b = static_cast<std::size_t>(j);
      const MatrixXd rhs = -(cc[a][b] + cc[b][a]);  // equals -2 CC_ii on the diagonal
      if (linalg::max_abs(bundle.hess[a][b] - rhs) > 1e-9) return false;
    }
  }
  return true;
}

}  // namespace hmme

#endif  // HMME_DERIVATIVES_HPP
