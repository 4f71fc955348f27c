#ifndef HMME_MME_HPP
#define HMME_MME_HPP

#include <string>
#include <vector>

#include "hmme/error.hpp"
#include "hmme/linalg.hpp"
#include "hmme/model.hpp"

namespace hmme {

/// Solution of Henderson's mixed model equations at fixed variance components.
///
/// `C` is the symmetric g-inverse of the MME matrix H used throughout; when H
/// is nonsingular it is the ordinary inverse. Block accessors follow the
/// partition (b, u_1, ..., u_s).
class MmeSolution {
 public:
  MmeSolution(VectorXd b, VectorXd u, MatrixXd c, VarComponents vc, std::vector<Index> offsets, Index rank)
      : b_tilde(std::move(b)),
        u_tilde(std::move(u)),
        C(std::move(c)),
        sigma2_used(std::move(vc)),
        offsets_(std::move(offsets)),
        rank_(rank) {}

  VectorXd b_tilde;
  VectorXd u_tilde;
  MatrixXd C;
  VarComponents sigma2_used;

  Index p() const { return b_tilde.size(); }
  Index r() const { return u_tilde.size(); }
  Index s() const { return static_cast<Index>(offsets_.size()) - 1; }
  Index r_i(Index i) const { return offsets_[static_cast<std::size_t>(i) + 1] - offsets_[static_cast<std::size_t>(i)]; }
  /// Row of C where random block i starts.
  Index row_of(Index i) const { return p() + offsets_[static_cast<std::size_t>(i)]; }
  /// Rank of H as seen by the g-inverse; p + r when H is nonsingular.
  Index rank() const { return rank_; }

  VectorXd u_block(Index i) const { return u_tilde.segment(offsets_[static_cast<std::size_t>(i)], r_i(i)); }

  MatrixXd C11() const { return C.topLeftCorner(p(), p()); }
  MatrixXd C12() const { return C.topRightCorner(p(), r()); }
  MatrixXd C22() const { return C.bottomRightCorner(r(), r()); }
  /// {C}_ij: the (r_i x r_j) block of C for random factors i and j.
  MatrixXd block(Index i, Index j) const { return C.block(row_of(i), row_of(j), r_i(i), r_i(j)); }
  /// {C}_i. : the (r_i x (p+r)) row block of random factor i.
  MatrixXd row_block(Index i) const { return C.middleRows(row_of(i), r_i(i)); }
  /// {C}_.i : the ((p+r) x r_i) column block of random factor i.
  MatrixXd col_block(Index i) const { return C.middleCols(row_of(i), r_i(i)); }

  const std::vector<Index>& offsets() const { return offsets_; }

 private:
  std::vector<Index> offsets_;
  Index rank_;
};

namespace detail {

inline void require_components(const LmmSpec& spec, const VarComponents& vc) {
  if (vc.s() != spec.s()) {
    throw Error(ErrorCode::DimensionMismatch, "model has " + std::to_string(spec.s()) + " random factors but " +
                                                  std::to_string(vc.size()) + " variance components were given");
  }
}

inline MatrixXd xz(const LmmSpec& spec) {
  MatrixXd out(spec.n(), spec.p() + spec.r());
  out << spec.X(), spec.Z();
  return out;
}

inline std::vector<Index> offsets(const LmmSpec& spec) {
  std::vector<Index> off;
  for (Index i = 0; i <= spec.s(); ++i) off.push_back(i < spec.s() ? spec.offset(i) : spec.r());
  return off;
}

}  // namespace detail

/// Diagonal of G = diag(sigma2_i I_{r_i}).
inline VectorXd g_diagonal(const LmmSpec& spec, const VarComponents& vc) {
  detail::require_components(spec, vc);
  VectorXd g(spec.r());
  for (Index i = 0; i < spec.s(); ++i) g.segment(spec.offset(i), spec.r_i(i)).setConstant(vc[i]);
  return g;
}

/// H0 = (X, Z)'(X, Z).
inline MatrixXd assemble_h0(const LmmSpec& spec) {
  const MatrixXd a = detail::xz(spec);
  MatrixXd h0 = MatrixXd::Zero(a.cols(), a.cols());
  h0.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
  return h0.selfadjointView<Eigen::Lower>();
}

/// H = (X, Z)'R^-1(X, Z) + (0, I)'G^-1(0, I).
inline MatrixXd assemble_h(const LmmSpec& spec, const VarComponents& vc) {
  const VectorXd g = g_diagonal(spec, vc);
  MatrixXd h = assemble_h0(spec) / vc.error_variance();
  h.bottomRightCorner(spec.r(), spec.r()).diagonal() += g.cwiseInverse();
  return h;
}

/// Solves the MMEs at `vc` for response `y`.
///
/// Works on the stabilised system in (b, v) with u = G v. Writing D = diag(I, G),
/// that system is H D, which is similar to the symmetric S = D^1/2 H D^1/2 whose
/// random block is I + G^1/2 Z'Z G^1/2 / sigma2_e. S is pseudo-inverted by
/// eigendecomposition, and C = D^1/2 S^+ D^1/2 is a symmetric g-inverse of H.
inline MmeSolution solve_mme(const LmmSpec& spec, const VarComponents& vc, const VectorXd& y) {
  detail::require_components(spec, vc);
  if (y.size() != spec.n()) throw Error(ErrorCode::DimensionMismatch, "response length differs from design rows");
  const Index p = spec.p();
  const Index r = spec.r();
  const double se = vc.error_variance();

  const VectorXd g = g_diagonal(spec, vc);
  VectorXd d(p + r);
  d.head(p).setOnes();
  d.tail(r) = g.cwiseSqrt();

  const MatrixXd a = detail::xz(spec);
  const MatrixXd h0 = assemble_h0(spec);
  MatrixXd s_mat = d.asDiagonal() * h0 * d.asDiagonal() / se;
  s_mat.bottomRightCorner(r, r).diagonal().array() += 1.0;
  const VectorXd rhs_scaled = d.cwiseProduct(a.transpose() * y) / se;

  Index rank = 0;
  const MatrixXd s_pinv = linalg::sym_pinv(s_mat, linalg::kPinvRelTol, &rank);
  VectorXd z = s_pinv * rhs_scaled;

  // a floored sigma2_e leaves S badly conditioned; a few refinement steps
  // recover a backward-stable solution there
  double resid = (s_mat * z - rhs_scaled).norm();
  for (int step = 0; step < 3 && resid > 0.0; ++step) {
    const VectorXd next = z - s_pinv * (s_mat * z - rhs_scaled);
    const double next_resid = (s_mat * next - rhs_scaled).norm();
    if (!(next_resid < resid)) break;
    z = next;
    resid = next_resid;
  }
  const double scale = s_mat.norm() * z.norm() + rhs_scaled.norm();
  if (!(resid <= 1e-8 * scale)) {
    throw Error(ErrorCode::SingularSystem, "mixed model equations are inconsistent at the given variance components");
  }

  VectorXd b = z.head(p);
  const VectorXd v = z.tail(r).cwiseQuotient(d.tail(r));  // solution of the stabilised system
  VectorXd u = g.cwiseProduct(v);
  MatrixXd c = linalg::symmetrize(d.asDiagonal() * s_pinv * d.asDiagonal());
  return MmeSolution(std::move(b), std::move(u), std::move(c), vc, detail::offsets(spec), rank);
}

inline MmeSolution solve_mme(const LmmSpec& spec, const VarComponents& vc) { return solve_mme(spec, vc, spec.y()); }

/// M = Z'Z - Z'X(X'X)^- X'Z, i.e. Z' (I - P_X) Z.
inline MatrixXd residual_z_gram(const LmmSpec& spec) {
  const MatrixXd basis = linalg::column_basis(spec.X());
  const MatrixXd proj = basis.transpose() * spec.Z();
  return linalg::symmetrize(spec.Z().transpose() * spec.Z() - proj.transpose() * proj);
}

/// C22 through sigma2_e G (sigma2_e I + M G)^-1, without forming H.
inline MatrixXd c22_fast(const LmmSpec& spec, const VarComponents& vc) {
  const VectorXd g = g_diagonal(spec, vc);
  const double se = vc.error_variance();
  const Index r = spec.r();
  MatrixXd a = residual_z_gram(spec) * g.asDiagonal();
  a.diagonal().array() += se;
  const MatrixXd inv = a.partialPivLu().solve(MatrixXd::Identity(r, r));
  return linalg::symmetrize(se * g.asDiagonal() * inv);
}

/// BLUE of K'b, i.e. K' b~.
inline VectorXd blue(const LmmSpec& spec, const MmeSolution& sol, const MatrixXd& k) {
  require_estimable(k, spec.X());
  return k.transpose() * sol.b_tilde;
}

/// BLUP of w = K'b + L'u, i.e. K' b~ + L' u~.
inline VectorXd blup(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast) {
  require_estimable(contrast.K(), spec.X());
  return contrast.K().transpose() * sol.b_tilde + contrast.L().transpose() * sol.u_tilde;
}

/// MSE matrix of the BLUP, Lambda' C Lambda.
inline MatrixXd mse_blup(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast) {
  require_estimable(contrast.K(), spec.X());
  return linalg::symmetrize(contrast.Lambda().transpose() * sol.C * contrast.Lambda());
}

}  // namespace hmme

#endif  // HMME_MME_HPP
