#ifndef HMME_VARCOMP_HPP
#define HMME_VARCOMP_HPP

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hmme/error.hpp"
#include "hmme/linalg.hpp"
#include "hmme/mme.hpp"
#include "hmme/model.hpp"

namespace hmme {

enum class VcMethod { ML, REML, MinqeI, MinqeUI };

inline std::string_view to_string(VcMethod m) {
  switch (m) {
    case VcMethod::ML: return "ml";
    case VcMethod::REML: return "reml";
    case VcMethod::MinqeI: return "minqe-i";
    case VcMethod::MinqeUI: return "minqe-ui";
  }
  return "?";
}

inline VcMethod parse_vc_method(std::string_view text) {
  if (text == "ml") return VcMethod::ML;
  if (text == "reml") return VcMethod::REML;
  if (text == "minqe-i") return VcMethod::MinqeI;
  if (text == "minqe-ui") return VcMethod::MinqeUI;
  throw Error(ErrorCode::InvalidArgument, "unknown estimation method '" + std::string(text) + "'");
}

struct EstimationOptions {
  /// Starting values; defaults to var(y)/(s+1) for every component.
  std::optional<VectorXd> start;
  /// Stop once the sup-norm change of sigma2 drops below eps.
  double eps = 1e-8;
  int max_iter = 500;
};

/// Result of a variance-component fit.
struct VcEstimate {
  VcMethod method;
  VarComponents sigma2_hat;
  /// Last update before flooring (for MINQE: H^+ q, which may be negative).
  VectorXd sigma2_unconstrained;
  /// I_ML or I_REML evaluated at sigma2_hat (MINQE: at the prior).
  MatrixXd fisher;
  /// fisher^-1, absent when the information matrix is singular.
  std::optional<MatrixXd> sigma_cov_hat;
  std::optional<double> loglik;
  int iterations = 0;
  bool converged = false;
  /// Some component hit the variance floor.
  bool boundary = false;
  std::vector<Index> floored;
  /// MINQE only: the MINQE matrix H_(I) or H_(UI), and whether it was rank deficient.
  std::optional<MatrixXd> minqe_matrix;
  bool non_unique = false;
  /// sigma2 iterates, starting value first.
  std::vector<VectorXd> path;
  MmeSolution solution;

  bool identifiable() const { return sigma_cov_hat.has_value(); }
};

namespace detail {

inline double sample_variance(const VectorXd& y) {
  if (y.size() < 2) return 0.0;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1);
}

inline double variance_floor(const VectorXd& y) {
  const double v = sample_variance(y);
  return v > 0.0 ? 1e-10 * v : std::numeric_limits<double>::min();
}

/// A (sigma2_e I + B G)^-1 sigma2_e for B = Z'Z (ML) or M (REML).
inline MatrixXd shrinkage_matrix(const MatrixXd& b, const VectorXd& g, double se) {
  const Index r = b.rows();
  MatrixXd a = b * g.asDiagonal();
  a.diagonal().array() += se;
  return se * a.partialPivLu().solve(MatrixXd::Identity(r, r));
}

/// Fisher matrix layout shared by I_ML (blocks of W) and I_REML (blocks of T).
inline MatrixXd fisher_from_blocks(const LmmSpec& spec, const VarComponents& vc, const MatrixXd& w,
                                   double bottom_count) {
  const Index s = spec.s();
  auto blk = [&](Index i, Index j) { return w.block(spec.offset(i), spec.offset(j), spec.r_i(i), spec.r_i(j)); };
  MatrixXd cross(s, s);  // tr(W_ij W_ji)
  for (Index i = 0; i < s; ++i) {
    for (Index j = 0; j < s; ++j) cross(i, j) = (blk(i, j) * blk(j, i)).trace();
  }
  MatrixXd f(s + 1, s + 1);
  const double se = vc.error_variance();
  for (Index i = 0; i < s; ++i) {
    const double tr_ii = blk(i, i).trace();
    for (Index j = 0; j < s; ++j) {
      const double delta = (i == j) ? static_cast<double>(spec.r_i(i)) - 2.0 * tr_ii : 0.0;
      f(i, j) = (delta + cross(i, j)) / (vc[i] * vc[j]);
    }
    f(i, s) = (tr_ii - cross.row(i).sum()) / (vc[i] * se);
    f(s, i) = f(i, s);
  }
  f(s, s) = (bottom_count + (w * w).trace()) / (se * se);
  return linalg::symmetrize(0.5 * f);
}

struct VcDesign {
  MatrixXd ztz;
  MatrixXd m;
  Index rank_x;
};

inline VcDesign vc_design(const LmmSpec& spec) {
  return {spec.Z().transpose() * spec.Z(), residual_z_gram(spec), linalg::matrix_rank(spec.X())};
}

inline std::optional<MatrixXd> invert_information(const MatrixXd& f) {
  auto [lo, hi] = linalg::eigen_range(f);
  if (!(hi > 0.0) || lo <= 1e-10 * hi) return std::nullopt;
  return linalg::spd_inverse(f, "Fisher information");
}

}  // namespace detail

/// Fisher information of the ML estimators, built from blocks of
/// W = sigma2_e (sigma2_e I + Z'Z G)^-1.
inline MatrixXd fisher_ml(const LmmSpec& spec, const VarComponents& vc) {
  const VectorXd g = g_diagonal(spec, vc);
  const MatrixXd w = detail::shrinkage_matrix(spec.Z().transpose() * spec.Z(), g, vc.error_variance());
  return detail::fisher_from_blocks(spec, vc, w, static_cast<double>(spec.n() - spec.r()));
}

/// Fisher information of the REML estimators, built from blocks of
/// T = sigma2_e (sigma2_e I + M G)^-1 with M = Z'(I - P_X)Z.
inline MatrixXd fisher_reml(const LmmSpec& spec, const VarComponents& vc) {
  const VectorXd g = g_diagonal(spec, vc);
  const MatrixXd t = detail::shrinkage_matrix(residual_z_gram(spec), g, vc.error_variance());
  const Index rank_x = linalg::matrix_rank(spec.X());
  return detail::fisher_from_blocks(spec, vc, t, static_cast<double>(spec.n() - rank_x - spec.r()));
}

namespace detail {

/// y'(y - X b~ - Z u~) / sigma2_e, the GLS quadratic form (y - X b~)'V^-1(y - X b~).
inline double gls_quadratic(const LmmSpec& spec, const MmeSolution& sol, const VectorXd& y) {
  const VectorXd resid = y - spec.X() * sol.b_tilde - spec.Z() * sol.u_tilde;
  return y.dot(resid) / sol.sigma2_used.error_variance();
}

/// log|I + G^1/2 B G^1/2 / sigma2_e|, i.e. -log|W| (B = Z'Z) or -log|T| (B = M).
inline double shrinkage_logdet(const MatrixXd& b, const VectorXd& g, double se) {
  const VectorXd sg = g.cwiseSqrt();
  MatrixXd a = sg.asDiagonal() * b * sg.asDiagonal() / se;
  a.diagonal().array() += 1.0;
  return linalg::spd_logdet(a);
}

}  // namespace detail

/// Gaussian log-likelihood at vc, profiled over b at b~(vc).
inline double loglik_ml(const LmmSpec& spec, const VarComponents& vc, const VectorXd& y) {
  const auto sol = solve_mme(spec, vc, y);
  const double se = vc.error_variance();
  const auto n = static_cast<double>(spec.n());
  const double logdet_v =
      n * std::log(se) + detail::shrinkage_logdet(spec.Z().transpose() * spec.Z(), g_diagonal(spec, vc), se);
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet_v + detail::gls_quadratic(spec, sol, y));
}

inline double loglik_ml(const LmmSpec& spec, const VarComponents& vc) { return loglik_ml(spec, vc, spec.y()); }

/// Restricted log-likelihood of the error contrasts B'y with BB' = I - P_X, B'B = I.
inline double loglik_reml(const LmmSpec& spec, const VarComponents& vc, const VectorXd& y) {
  const auto sol = solve_mme(spec, vc, y);
  const double se = vc.error_variance();
  const auto dof = static_cast<double>(spec.n() - linalg::matrix_rank(spec.X()));
  const double logdet =
      dof * std::log(se) + detail::shrinkage_logdet(residual_z_gram(spec), g_diagonal(spec, vc), se);
  return -0.5 * (dof * std::log(2.0 * std::numbers::pi) + logdet + detail::gls_quadratic(spec, sol, y));
}

inline double loglik_reml(const LmmSpec& spec, const VarComponents& vc) { return loglik_reml(spec, vc, spec.y()); }

/// -1/2 (n log(2 pi sigma2_e) - log|W| + n). Equals loglik_ml only at the ML fixed point.
inline double loglik_ml_at_estimate(const LmmSpec& spec, const VarComponents& vc) {
  const double se = vc.error_variance();
  const auto n = static_cast<double>(spec.n());
  const double neg_logdet_w = detail::shrinkage_logdet(spec.Z().transpose() * spec.Z(), g_diagonal(spec, vc), se);
  return -0.5 * (n * std::log(2.0 * std::numbers::pi * se) + neg_logdet_w + n);
}

/// -1/2 ((n - r_X) log(2 pi sigma2_e) - log|T| + (n - r_X)). Equals loglik_reml only at the REML fixed point.
inline double loglik_reml_at_estimate(const LmmSpec& spec, const VarComponents& vc) {
  const double se = vc.error_variance();
  const auto dof = static_cast<double>(spec.n() - linalg::matrix_rank(spec.X()));
  const double neg_logdet_t = detail::shrinkage_logdet(residual_z_gram(spec), g_diagonal(spec, vc), se);
  return -0.5 * (dof * std::log(2.0 * std::numbers::pi * se) + neg_logdet_t + dof);
}

namespace detail {

/// One Searle-Casella-McCulloch update. `reml` selects T and n - r_X over W and n.
inline VectorXd vc_update(const LmmSpec& spec, const VcDesign& design, const MmeSolution& sol, const VectorXd& y,
                          bool reml) {
  const VarComponents& vc = sol.sigma2_used;
  const VectorXd g = g_diagonal(spec, vc);
  const double se = vc.error_variance();
  const MatrixXd w = shrinkage_matrix(reml ? design.m : design.ztz, g, se);
  VectorXd next(spec.s() + 1);
  for (Index i = 0; i < spec.s(); ++i) {
    const VectorXd ui = sol.u_block(i);
    const double tr = w.block(spec.offset(i), spec.offset(i), spec.r_i(i), spec.r_i(i)).trace();
    const double denom = static_cast<double>(spec.r_i(i)) - tr;
    next(i) = denom > 0.0 ? ui.squaredNorm() / denom : 0.0;
  }
  const VectorXd resid = y - spec.X() * sol.b_tilde - spec.Z() * sol.u_tilde;
  const auto dof = static_cast<double>(reml ? spec.n() - design.rank_x : spec.n());
  next(spec.s()) = y.dot(resid) / dof;
  return next;
}

inline VectorXd apply_floor(const VectorXd& raw, double floor, std::vector<Index>* floored) {
  VectorXd out = raw;
  if (floored != nullptr) floored->clear();
  for (Index i = 0; i < raw.size(); ++i) {
    if (!(raw(i) >= floor)) {
      out(i) = floor;
      if (floored != nullptr) floored->push_back(i);
    }
  }
  return out;
}

inline VectorXd default_start(const LmmSpec& spec, const VectorXd& y) {
  const double v = sample_variance(y);
  if (!(v > 0.0)) throw Error(ErrorCode::Degenerate, "response has zero variance; supply starting values");
  return VectorXd::Constant(spec.s() + 1, v / static_cast<double>(spec.s() + 1));
}

inline VcEstimate iterate(const LmmSpec& spec, const VectorXd& y, const EstimationOptions& opts, bool reml) {
  validate_spec(spec);
  if (!(opts.eps > 0.0) || opts.max_iter < 1) {
    throw Error(ErrorCode::InvalidArgument, "eps must be positive and max_iter at least 1");
  }
  const VcDesign design = vc_design(spec);
  const double floor = variance_floor(y);
  VectorXd sigma = opts.start ? *opts.start : default_start(spec, y);
  if (sigma.size() != spec.s() + 1) {
    throw Error(ErrorCode::DimensionMismatch, "starting values need s+1 = " + std::to_string(spec.s() + 1) + " entries");
  }
  VarComponents{sigma};  // validates positivity

  std::vector<VectorXd> path{sigma};
  std::vector<Index> floored;
  VectorXd raw = sigma;
  bool converged = false;
  int iterations = 0;
  bool boundary = false;
  for (int t = 1; t <= opts.max_iter; ++t) {
    const MmeSolution sol = solve_mme(spec, VarComponents(sigma), y);
    raw = vc_update(spec, design, sol, y, reml);
    const VectorXd next = apply_floor(raw, floor, &floored);
    boundary = boundary || !floored.empty();
    const double change = (next - sigma).cwiseAbs().maxCoeff();
    sigma = next;
    path.push_back(sigma);
    iterations = t;
    if (change < opts.eps) {
      converged = true;
      break;
    }
  }
  boundary = !floored.empty();

  const VarComponents hat(sigma);
  MatrixXd fisher = reml ? fisher_reml(spec, hat) : fisher_ml(spec, hat);
  auto cov = invert_information(fisher);
  const double ll = reml ? loglik_reml(spec, hat, y) : loglik_ml(spec, hat, y);
  return VcEstimate{reml ? VcMethod::REML : VcMethod::ML,
                    hat,
                    raw,
                    std::move(fisher),
                    std::move(cov),
                    ll,
                    iterations,
                    converged,
                    boundary,
                    floored,
                    std::nullopt,
                    false,
                    std::move(path),
                    solve_mme(spec, hat, y)};
}

}  // namespace detail

/// One ML update sigma2^(t) -> sigma2^(t+1), without flooring.
inline VectorXd ml_update(const LmmSpec& spec, const VarComponents& vc, const VectorXd& y) {
  return detail::vc_update(spec, detail::vc_design(spec), solve_mme(spec, vc, y), y, false);
}

/// One REML update sigma2^(t) -> sigma2^(t+1), without flooring.
inline VectorXd reml_update(const LmmSpec& spec, const VarComponents& vc, const VectorXd& y) {
  return detail::vc_update(spec, detail::vc_design(spec), solve_mme(spec, vc, y), y, true);
}

/// ML estimates by iterated MME solving. Nonconvergence is flagged, not thrown.
inline VcEstimate estimate_ml(const LmmSpec& spec, const VectorXd& y, const EstimationOptions& opts = {}) {
  return detail::iterate(spec, y, opts, false);
}

inline VcEstimate estimate_ml(const LmmSpec& spec, const EstimationOptions& opts = {}) {
  return estimate_ml(spec, spec.y(), opts);
}

/// REML estimates by iterated MME solving. Nonconvergence is flagged, not thrown.
inline VcEstimate estimate_reml(const LmmSpec& spec, const VectorXd& y, const EstimationOptions& opts = {}) {
  return detail::iterate(spec, y, opts, true);
}

inline VcEstimate estimate_reml(const LmmSpec& spec, const EstimationOptions& opts = {}) {
  return estimate_reml(spec, spec.y(), opts);
}

enum class MinqeKind { I, UI };

/// MINQE quadratic forms q at the prior: u~_i'u~_i / prior_i^2 and e'e / prior_e^2.
inline VectorXd minqe_q(const LmmSpec& spec, const MmeSolution& sol, const VectorXd& y) {
  const VarComponents& prior = sol.sigma2_used;
  VectorXd q(spec.s() + 1);
  for (Index i = 0; i < spec.s(); ++i) q(i) = sol.u_block(i).squaredNorm() / (prior[i] * prior[i]);
  const VectorXd resid = y - spec.X() * sol.b_tilde - spec.Z() * sol.u_tilde;
  const double se = prior.error_variance();
  q(spec.s()) = resid.squaredNorm() / (se * se);
  return q;
}

/// One-shot MINQE(I) or MINQE(U,I) at `prior`: solves H sigma2 = q with
/// H = 2 I_ML(prior) or 2 I_REML(prior); the Moore-Penrose solution is used
/// when H is singular.
inline VcEstimate minqe(const LmmSpec& spec, const VectorXd& y, const VarComponents& prior, MinqeKind kind) {
  validate_spec(spec);
  const MmeSolution at_prior = solve_mme(spec, prior, y);
  const VectorXd q = minqe_q(spec, at_prior, y);
  const MatrixXd info = kind == MinqeKind::I ? fisher_ml(spec, prior) : fisher_reml(spec, prior);
  const MatrixXd h = 2.0 * info;
  Index rank = 0;
  const MatrixXd h_pinv = linalg::sym_pinv(h, 1e-10, &rank);
  const VectorXd raw = h_pinv * q;

  std::vector<Index> floored;
  const VarComponents hat(detail::apply_floor(raw, detail::variance_floor(y), &floored));
  auto cov = detail::invert_information(info);
  return VcEstimate{kind == MinqeKind::I ? VcMethod::MinqeI : VcMethod::MinqeUI,
                    hat,
                    raw,
                    info,
                    std::move(cov),
                    std::nullopt,
                    1,
                    true,
                    !floored.empty(),
                    floored,
                    h,
                    rank < h.rows(),
                    {prior.values(), hat.values()},
                    solve_mme(spec, hat, y)};
}

inline VcEstimate minqe(const LmmSpec& spec, const VarComponents& prior, MinqeKind kind) {
  return minqe(spec, spec.y(), prior, kind);
}

/// Dispatches on method; `prior` is required for the MINQE variants.
inline VcEstimate estimate(const LmmSpec& spec, VcMethod method, const EstimationOptions& opts = {},
                           const std::optional<VarComponents>& prior = std::nullopt) {
  switch (method) {
    case VcMethod::ML: return estimate_ml(spec, opts);
    case VcMethod::REML: return estimate_reml(spec, opts);
    case VcMethod::MinqeI:
    case VcMethod::MinqeUI:
      if (!prior) throw Error(ErrorCode::InvalidArgument, "MINQE needs prior variance components");
      return minqe(spec, *prior, method == VcMethod::MinqeI ? MinqeKind::I : MinqeKind::UI);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method");
}

}  // namespace hmme

#endif  // HMME_VARCOMP_HPP
