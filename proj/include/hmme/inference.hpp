#ifndef HMME_INFERENCE_HPP
#define HMME_INFERENCE_HPP

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hmme/derivatives.hpp"
#include "hmme/error.hpp"
#include "hmme/linalg.hpp"
#include "hmme/mme.hpp"
#include "hmme/model.hpp"
#include "hmme/varcomp.hpp"

namespace hmme {

inline constexpr double kInfiniteDf = std::numeric_limits<double>::infinity();

enum class InferenceMethod { ExactChisq, Satterthwaite, FaiCornelius, KR, KRModified };

inline std::string_view to_string(InferenceMethod m) {
  switch (m) {
    case InferenceMethod::ExactChisq: return "exact-chisq";
    case InferenceMethod::Satterthwaite: return "satterthwaite";
    case InferenceMethod::FaiCornelius: return "fai-cornelius";
    case InferenceMethod::KR: return "kr";
    case InferenceMethod::KRModified: return "kr-modified";
  }
  return "?";
}

inline InferenceMethod parse_inference_method(std::string_view text) {
  if (text == "exact-chisq") return InferenceMethod::ExactChisq;
  if (text == "satterthwaite") return InferenceMethod::Satterthwaite;
  if (text == "fai-cornelius") return InferenceMethod::FaiCornelius;
  if (text == "kr") return InferenceMethod::KR;
  if (text == "kr-modified") return InferenceMethod::KRModified;
  throw Error(ErrorCode::InvalidArgument, "unknown inference method '" + std::string(text) + "'");
}

/// {w : (kappa/q)(w_hat - w)' shape^-1 (w_hat - w) <= F_{q,nu;level}}, stored as
/// (w - center)' shape^-1 (w - center) <= radius2.
struct Ellipsoid {
  VectorXd center;
  MatrixXd shape;
  double radius2 = 0.0;

  bool contains(const VectorXd& w) const {
    const VectorXd d = w - center;
    return d.dot(shape.ldlt().solve(d)) <= radius2;
  }
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct InferenceResult {
  InferenceMethod method = InferenceMethod::KRModified;
  VectorXd w_hat;
  VectorXd w0;
  MatrixXd mse_used;
  /// "t", "F" or "Q".
  std::string statistic_kind;
  double statistic = 0.0;
  /// Denominator df; +inf under the infinite-df convention (chi-square tails).
  double df = kInfiniteDf;
  Index df_num = 1;
  double kappa = 1.0;
  double p_value = 1.0;
  double level = 0.95;
  std::optional<Interval> interval;  // q = 1 only
  Ellipsoid region;
  std::vector<std::string> flags;
};

// ---------------------------------------------------------------------------
// distribution helpers

inline double chisq_upper(double x, double df) {
  if (x <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

/// Upper tail of F_{q,nu}; nu = +inf uses chi2_q / q.
inline double f_upper(double x, double q, double nu) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(nu)) return chisq_upper(q * x, q);
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f_distribution<double>(q, nu), x));
}

inline double f_quantile(double prob, double q, double nu) {
  if (std::isinf(nu)) return boost::math::quantile(boost::math::chi_squared_distribution<double>(q), prob) / q;
  return boost::math::quantile(boost::math::fisher_f_distribution<double>(q, nu), prob);
}

inline double t_two_sided(double t, double nu) {
  if (t == 0.0) return 1.0;
  if (std::isinf(nu)) return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), std::abs(t)));
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(nu), std::abs(t)));
}

inline double t_quantile(double prob, double nu) {
  if (std::isinf(nu)) return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
  return boost::math::quantile(boost::math::students_t_distribution<double>(nu), prob);
}

namespace detail {

inline void require_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must lie in (0, 1)");
}

inline MatrixXd require_pd(const MatrixXd& m, const char* what) {
  auto [lo, hi] = linalg::eigen_range(m);
  if (!(hi > 0.0) || lo <= 1e-14 * hi) throw Error(ErrorCode::SingularMatrix, std::string(what) + " is not positive definite");
  return linalg::spd_inverse(m, what);
}

inline double quad_form(const VectorXd& d, const MatrixXd& m) { return d.dot(require_pd(m, "MSE matrix") * d); }

}  // namespace detail

// ---------------------------------------------------------------------------
// pivots

struct PivotValue {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Q = (w~ - w0)' (Lambda' C Lambda)^-1 (w~ - w0) against chi2_q, for known variance components.
inline PivotValue exact_chisq_pivot(const VectorXd& w_tilde, const MatrixXd& mse, const VectorXd& w0) {
  if (w_tilde.size() != w0.size() || mse.rows() != w0.size()) {
    throw Error(ErrorCode::DimensionMismatch, "w0 must have q entries");
  }
  const double qv = detail::quad_form(w_tilde - w0, mse);
  return {qv, chisq_upper(qv, static_cast<double>(w0.size()))};
}

inline PivotValue exact_chisq_pivot(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                                    const VectorXd& w0) {
  return exact_chisq_pivot(blup(spec, sol, contrast), mse_blup(spec, sol, contrast), w0);
}

/// F = (1/q)(w_hat - w0)' mse^-1 (w_hat - w0); p = P(F_{q,nu} > kappa F).
inline PivotValue wald_f(const VectorXd& w_hat, const VectorXd& w0, const MatrixXd& mse, double kappa, double nu) {
  if (w_hat.size() != w0.size() || mse.rows() != w0.size()) {
    throw Error(ErrorCode::DimensionMismatch, "w0 must have q entries");
  }
  if (!(kappa > 0.0) || !(nu > 0.0)) throw Error(ErrorCode::InvalidArgument, "kappa and nu must be positive");
  const auto q = static_cast<double>(w0.size());
  const double f = detail::quad_form(w_hat - w0, mse) / q;
  return {f, f_upper(kappa * f, q, nu)};
}

struct TTest {
  double t = 0.0;
  double p_value = 1.0;
  Interval interval;
};

/// t = (w_hat - w0)/sqrt(mse) with two-sided p from t_nu and the level interval.
inline TTest t_stat(double w_hat, double w0, double mse, double nu, double level = 0.95) {
  if (!(mse > 0.0)) throw Error(ErrorCode::InvalidArgument, "MSE must be positive");
  if (!(nu > 0.0)) throw Error(ErrorCode::InvalidArgument, "degrees of freedom must be positive");
  detail::require_level(level);
  const double se = std::sqrt(mse);
  const double t = (w_hat - w0) / se;
  const double half = t_quantile(0.5 + 0.5 * level, nu) * se;
  return {t, t_two_sided(t, nu), {w_hat - half, w_hat + half}};
}

inline Ellipsoid prediction_region(const VectorXd& w_hat, const MatrixXd& mse, double kappa, double nu, double level) {
  detail::require_level(level);
  detail::require_pd(mse, "MSE matrix");
  if (!(kappa > 0.0) || !(nu > 0.0)) throw Error(ErrorCode::InvalidArgument, "kappa and nu must be positive");
  const auto q = static_cast<double>(w_hat.size());
  return {w_hat, mse, q * f_quantile(level, q, nu) / kappa};
}

// ---------------------------------------------------------------------------
// degrees of freedom

struct SatterthwaiteDf {
  double nu = 0.0;
  /// Formula gave nu in (0, 1); reported value floored at 1.
  bool floored = false;
  VectorXd gradient;
  double variance = 0.0;  // g' Sigma g
};

/// nu = 2 M^2 / (g' Sigma g) for a single contrast (q = 1).
inline SatterthwaiteDf satterthwaite_df(const DerivBundle& bundle, const MatrixXd& sigma) {
  if (bundle.M.rows() != 1) throw Error(ErrorCode::InvalidArgument, "Satterthwaite df needs a single contrast (q = 1)");
  const auto k = static_cast<Index>(bundle.grad.size());
  if (sigma.rows() != k || sigma.cols() != k) throw Error(ErrorCode::DimensionMismatch, "Sigma must be (s+1) x (s+1)");
  VectorXd g(k);
  for (Index i = 0; i < k; ++i) g(i) = bundle.grad[static_cast<std::size_t>(i)](0, 0);
  const double m = bundle.M(0, 0);
  const double num = 2.0 * m * m;
  const double den = g.dot(sigma * g);
  if (!(den > 1e-14 * num)) {
    throw Error(ErrorCode::ZeroVarianceOfVariance, "estimated variance of the MSE is zero; no df can be formed");
  }
  SatterthwaiteDf out{num / den, false, g, den};
  if (out.nu < 1.0) {
    out.nu = 1.0;
    out.floored = true;
  }
  return out;
}

inline SatterthwaiteDf satterthwaite_df(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                                        const MatrixXd& sigma) {
  return satterthwaite_df(mse_bundle(spec, sol, contrast, MatrixXd::Zero(spec.s() + 1, spec.s() + 1)), sigma);
}

struct FaiCorneliusDf {
  double nu = 0.0;
  double E = 0.0;
  VectorXd eigenvalues;  // of Lambda' C Lambda, descending
  MatrixXd U;            // matching eigenvectors
  VectorXd nu_i;         // +inf where a column has zero variance of variance
};

/// Descending eigen decomposition of a symmetric matrix with the first nonzero
/// entry of every eigenvector made positive.
inline std::pair<VectorXd, MatrixXd> ordered_eigen(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(linalg::symmetrize(m));
  const Index q = m.rows();
  std::vector<Index> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return es.eigenvalues()(a) > es.eigenvalues()(b); });
  VectorXd values(q);
  MatrixXd vectors(q, q);
  for (Index k = 0; k < q; ++k) {
    values(k) = es.eigenvalues()(order[static_cast<std::size_t>(k)]);
    VectorXd v = es.eigenvectors().col(order[static_cast<std::size_t>(k)]);
    for (Index j = 0; j < q; ++j) {
      if (std::abs(v(j)) > 1e-12) {
        if (v(j) < 0.0) v = -v;
        break;
      }
    }
    vectors.col(k) = v;
  }
  return {values, vectors};
}

inline FaiCorneliusDf fai_cornelius_ddf(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                                        const MatrixXd& sigma) {
  require_estimable(contrast.K(), spec.X());
  detail::require_sigma(sigma, spec.s());
  const Index q = contrast.q();
  auto [values, u] = ordered_eigen(mse_blup(spec, sol, contrast));
  const MatrixXd lam_fc = contrast.Lambda() * u;

  FaiCorneliusDf out;
  out.eigenvalues = values;
  out.U = u;
  out.nu_i.resize(q);
  double e = 0.0;
  for (Index k = 0; k < q; ++k) {
    const MatrixXd col = lam_fc.col(k);
    const auto grad = mse_gradient(spec, sol, col);
    VectorXd g(spec.s() + 1);
    for (Index i = 0; i <= spec.s(); ++i) g(i) = grad[static_cast<std::size_t>(i)](0, 0);
    const double m = col.col(0).dot(sol.C * col.col(0));
    const double den = g.dot(sigma * g);
    const double nu = den > 1e-14 * 2.0 * m * m ? 2.0 * m * m / den : kInfiniteDf;
    out.nu_i(k) = nu;
    if (nu > 2.0) e += std::isinf(nu) ? 1.0 : nu / (nu - 2.0);
  }
  out.E = e;
  if (!(e > 0.0)) throw Error(ErrorCode::DfUndefined, "every per-direction df is <= 2; Fai-Cornelius df undefined");
  if (!(e > static_cast<double>(q))) {
    throw Error(ErrorCode::DfUndefined, "Fai-Cornelius E does not exceed q; df would be nonpositive");
  }
  out.nu = 2.0 * e / (e - static_cast<double>(q));
  return out;
}

// ---------------------------------------------------------------------------
// adjusted MSE and Kenward-Roger

struct AdjustedMse {
  MatrixXd matrix;
  /// Tiny negative eigenvalues were clipped to zero.
  bool repaired = false;
};

namespace detail {

/// Explicit block form of M + 2 M_delta, evaluated from Lambda~ and blocks of C.
inline MatrixXd adjusted_mse_blocks(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                                    const MatrixXd& sigma) {
  const Index s = spec.s();
  const MatrixXd& c = sol.C;
  const MatrixXd lt = c * contrast.Lambda();
  const MatrixXd h0 = assemble_h0(spec);
  const VarComponents& vc = sol.sigma2_used;
  const double se = vc.error_variance();
  auto lt_i = [&](Index i) { return lt.middleRows(sol.row_of(i), sol.r_i(i)); };

  MatrixXd out = contrast.Lambda().transpose() * lt;
  out += 2.0 * sigma(s, s) / std::pow(se, 4) * lt.transpose() * (se * h0 - h0 * c * h0) * lt;
  for (Index i = 0; i < s; ++i) {
    const MatrixXd li = lt_i(i);
    out += 2.0 * sigma(i, i) / std::pow(vc[i], 4) * (vc[i] * li.transpose() * li - li.transpose() * sol.block(i, i) * li);
    const MatrixXd a = li.transpose() * sol.row_block(i) * h0 * lt;
    out -= 2.0 * sigma(i, s) / std::pow(vc[i] * se, 2) * (a + a.transpose());
    for (Index j = i + 1; j < s; ++j) {
      const MatrixXd b = li.transpose() * sol.block(i, j) * lt_i(j);
      out -= 2.0 * sigma(i, j) / std::pow(vc[i] * vc[j], 2) * (b + b.transpose());
    }
  }
  return linalg::symmetrize(out);
}

}  // namespace detail

/// Bias-corrected MSE of the EBLUP, M + 2 M_delta, from the explicit block form;
/// cross-checked against the derivative bundle.
inline AdjustedMse adjusted_mse(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                                const MatrixXd& sigma) {
  const DerivBundle bundle = mse_bundle(spec, sol, contrast, sigma);
  const MatrixXd explicit_form = detail::adjusted_mse_blocks(spec, sol, contrast, sigma);
  const MatrixXd via_bundle = linalg::symmetrize(bundle.M + 2.0 * bundle.m_delta);
  const double gap = (explicit_form - via_bundle).norm();
  if (!(gap <= 1e-9 * (1.0 + via_bundle.norm()))) {
    throw Error(ErrorCode::RouteDisagreement, "adjusted MSE forms disagree by " + std::to_string(gap));
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(explicit_form);
  VectorXd ev = es.eigenvalues();
  AdjustedMse out{explicit_form, false};
  if (ev.minCoeff() < 0.0) {
    if (ev.minCoeff() <= -1e-8) {
      throw Error(ErrorCode::NotPositiveSemidefinite, "adjusted MSE has eigenvalue " + std::to_string(ev.minCoeff()));
    }
    ev = ev.cwiseMax(0.0);
    out.matrix = linalg::symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    out.repaired = true;
  }
  return out;
}

enum class KrVariant { Plain, Modified };

struct KrScaleDf {
  double kappa = 1.0;
  double nu = kInfiniteDf;
  double A1 = 0.0;
  double A2 = 0.0;
  double B = 0.0;
  double E = 1.0;
  double V = 0.0;
  double rho = 0.0;
  std::vector<std::string> flags;
};

namespace detail {

/// A1 and A2 from traces of M^-1 M^(i).
inline std::pair<double, double> kr_a_generic(const DerivBundle& b, const MatrixXd& sigma) {
  const MatrixXd m_inv = require_pd(b.M, "plug-in MSE matrix");
  const auto k = static_cast<Index>(b.grad.size());
  std::vector<MatrixXd> p;
  for (const auto& g : b.grad) p.push_back(m_inv * g);
  double a1 = 0.0;
  double a2 = 0.0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      const auto& pi = p[static_cast<std::size_t>(i)];
      const auto& pj = p[static_cast<std::size_t>(j)];
      a1 += sigma(i, j) * pi.trace() * pj.trace();
      a2 += sigma(i, j) * (pi * pj).trace();
    }
  }
  return {a1, a2};
}

/// A1 and A2 in expanded form from Lambda~ blocks and H0.
inline std::pair<double, double> kr_a_expanded(const LmmSpec& spec, const MmeSolution& sol,
                                               const ContrastSet& contrast, const MatrixXd& sigma) {
  const Index s = spec.s();
  const MatrixXd lt = sol.C * contrast.Lambda();
  const MatrixXd m_inv = require_pd(contrast.Lambda().transpose() * lt, "plug-in MSE matrix");
  const MatrixXd h0 = assemble_h0(spec);
  const VarComponents& vc = sol.sigma2_used;
  const double se = vc.error_variance();
  std::vector<MatrixXd> pm;  // M^-1 Lambda~_i' Lambda~_i, last entry M^-1 Lambda~' H0 Lambda~
  for (Index i = 0; i < s; ++i) {
    const MatrixXd li = lt.middleRows(sol.row_of(i), sol.r_i(i));
    pm.push_back(m_inv * li.transpose() * li);
  }
  pm.push_back(m_inv * lt.transpose() * h0 * lt);
  auto scale = [&](Index i) { return i < s ? vc[i] : se; };
  double a1 = 0.0;
  double a2 = 0.0;
  for (Index i = 0; i <= s; ++i) {
    const auto& pi = pm[static_cast<std::size_t>(i)];
    a1 += sigma(i, i) / std::pow(scale(i), 4) * pi.trace() * pi.trace();
    a2 += sigma(i, i) / std::pow(scale(i), 4) * (pi * pi).trace();
    for (Index j = i + 1; j <= s; ++j) {
      const auto& pj = pm[static_cast<std::size_t>(j)];
      const double w = 2.0 * sigma(i, j) / std::pow(scale(i) * scale(j), 2);
      a1 += w * pi.trace() * pj.trace();
      a2 += w * (pi * pj).trace();
    }
  }
  return {a1, a2};
}

}  // namespace detail

/// Scale kappa and denominator df nu of the generalized Kenward-Roger F test.
///
/// nu = 4 + (q+2)/(q rho - 1). When |q rho - 1| <= 1e-12, or the formula yields
/// nu <= 2, nu is reported as +inf (chi-square limit) and flagged.
inline KrScaleDf kr_scale_ddf(const LmmSpec& spec, const MmeSolution& sol, const ContrastSet& contrast,
                              const MatrixXd& sigma, KrVariant variant) {
  const DerivBundle bundle = mse_bundle(spec, sol, contrast, sigma);
  const auto [a1, a2] = detail::kr_a_generic(bundle, sigma);
  const auto [e1, e2] = detail::kr_a_expanded(spec, sol, contrast, sigma);
  if (std::abs(a1 - e1) > 1e-10 * (1.0 + std::abs(a1)) || std::abs(a2 - e2) > 1e-10 * (1.0 + std::abs(a2))) {
    throw Error(ErrorCode::RouteDisagreement, "A1/A2 trace forms disagree with the expanded forms");
  }
  const auto q = static_cast<double>(contrast.q());
  KrScaleDf out;
  out.A1 = a1;
  out.A2 = a2;
  out.B = (a1 + 6.0 * a2) / (2.0 * q);
  if (variant == KrVariant::Plain) {
    out.E = 1.0 + a2 / q;
    out.V = 2.0 / q * (1.0 + out.B);
  } else {
    const double inv_e = 1.0 - a2 / q;
    if (!(inv_e > 0.0)) throw Error(ErrorCode::DfUndefined, "modified KR: A2 >= q makes E* undefined");
    out.E = 1.0 / inv_e;
    if (a2 == 0.0) {
      out.V = 2.0 / q;
    } else {
      const double g = ((q + 1.0) * a1 - (q + 4.0) * a2) / ((q + 2.0) * a2);
      const double den = 3.0 * q + 2.0 * (1.0 - g);
      if (den == 0.0) throw Error(ErrorCode::DfUndefined, "modified KR: 3q + 2(1 - g) vanishes");
      const double c1 = g / den;
      const double c2 = (q - g) / den;
      const double c3 = (q - g + 2.0) / den;
      const double d = std::pow(1.0 - c2 * out.B, 2) * (1.0 - c3 * out.B);
      // d (and V*) may be negative, e.g. the balanced one-way layout with a = 4
      // groups, where the formulas still give the exact (kappa, nu) = (1, 3).
      if (d == 0.0 || !std::isfinite(d)) throw Error(ErrorCode::DfUndefined, "modified KR: variance denominator vanishes");
      out.V = 2.0 / q * (1.0 + c1 * out.B) / d;
    }
  }
  if (!(out.E > 0.0)) throw Error(ErrorCode::DfUndefined, "KR expectation E is not positive");
  out.rho = out.V / (2.0 * out.E * out.E);
  const double denom = q * out.rho - 1.0;
  if (std::abs(denom) <= 1e-12) {
    out.nu = kInfiniteDf;
    out.flags.emplace_back("df-infinite");
  } else {
    out.nu = 4.0 + (q + 2.0) / denom;
    if (!(out.nu > 2.0)) {
      out.nu = kInfiniteDf;
      out.flags.emplace_back("df-clamped-infinite");
    }
  }
  out.kappa = std::isinf(out.nu) ? 1.0 / out.E : out.nu / (out.E * (out.nu - 2.0));
  return out;
}

// ---------------------------------------------------------------------------
// high-level entry point

struct InferenceOptions {
  InferenceMethod method = InferenceMethod::KRModified;
  std::optional<VectorXd> w0;  // defaults to zero
  double level = 0.95;
};

/// Runs one inference method for w = K'b + L'u at variance components `vc`.
///
/// Satterthwaite, Fai-Cornelius and exact chi-square use the plug-in MSE
/// Lambda' C Lambda; the Kenward-Roger variants use the adjusted MSE.
/// `sigma` is the estimated covariance of sigma2_hat and is required by every
/// method except exact-chisq.
inline InferenceResult infer(const LmmSpec& spec, const VarComponents& vc, const std::optional<MatrixXd>& sigma,
                             const ContrastSet& contrast, const InferenceOptions& opts) {
  validate_spec(spec);
  detail::require_level(opts.level);
  require_estimable(contrast.K(), spec.X());
  if (contrast.K().rows() != spec.p() || contrast.L().rows() != spec.r()) {
    throw Error(ErrorCode::DimensionMismatch, "contrast needs p rows in K and r rows in L");
  }
  const Index q = contrast.q();
  const MmeSolution sol = solve_mme(spec, vc);

  InferenceResult res;
  res.method = opts.method;
  res.w_hat = blup(spec, sol, contrast);
  res.w0 = opts.w0 ? *opts.w0 : VectorXd::Zero(q);
  if (res.w0.size() != q) throw Error(ErrorCode::DimensionMismatch, "w0 must have q = " + std::to_string(q) + " entries");
  res.df_num = q;
  res.level = opts.level;

  if (opts.method != InferenceMethod::ExactChisq && !sigma) {
    throw Error(ErrorCode::DfUndefined, "variance-component covariance is unavailable (singular information matrix)");
  }

  auto finish_f = [&](double kappa, double nu) {
    res.kappa = kappa;
    res.df = nu;
    const auto wf = wald_f(res.w_hat, res.w0, res.mse_used, kappa, nu);
    res.statistic_kind = "F";
    res.statistic = wf.statistic;
    res.p_value = wf.p_value;
    res.region = prediction_region(res.w_hat, res.mse_used, kappa, nu, opts.level);
    if (q == 1) {
      const double half = std::sqrt(res.region.radius2 * res.mse_used(0, 0));
      res.interval = Interval{res.w_hat(0) - half, res.w_hat(0) + half};
    }
  };

  switch (opts.method) {
    case InferenceMethod::ExactChisq: {
      res.mse_used = mse_blup(spec, sol, contrast);
      const auto pv = exact_chisq_pivot(res.w_hat, res.mse_used, res.w0);
      res.statistic_kind = "Q";
      res.statistic = pv.statistic;
      res.p_value = pv.p_value;
      res.df = kInfiniteDf;
      res.kappa = 1.0;
      res.region = prediction_region(res.w_hat, res.mse_used, 1.0, kInfiniteDf, opts.level);
      if (q == 1) {
        const double half = std::sqrt(res.region.radius2 * res.mse_used(0, 0));
        res.interval = Interval{res.w_hat(0) - half, res.w_hat(0) + half};
      }
      break;
    }
    case InferenceMethod::Satterthwaite: {
      if (q != 1) throw Error(ErrorCode::InvalidArgument, "Satterthwaite applies to a single contrast; use fai-cornelius");
      res.mse_used = mse_blup(spec, sol, contrast);
      const auto sd = satterthwaite_df(spec, sol, contrast, *sigma);
      if (sd.floored) res.flags.emplace_back("df-floored-at-1");
      const auto tt = t_stat(res.w_hat(0), res.w0(0), res.mse_used(0, 0), sd.nu, opts.level);
      res.statistic_kind = "t";
      res.statistic = tt.t;
      res.p_value = tt.p_value;
      res.df = sd.nu;
      res.interval = tt.interval;
      res.region = prediction_region(res.w_hat, res.mse_used, 1.0, sd.nu, opts.level);
      break;
    }
    case InferenceMethod::FaiCornelius: {
      res.mse_used = mse_blup(spec, sol, contrast);
      const auto fc = fai_cornelius_ddf(spec, sol, contrast, *sigma);
      finish_f(1.0, fc.nu);
      break;
    }
    case InferenceMethod::KR:
    case InferenceMethod::KRModified: {
      const auto adj = adjusted_mse(spec, sol, contrast, *sigma);
      if (adj.repaired) res.flags.emplace_back("adjusted-mse-repaired");
      res.mse_used = adj.matrix;
      const auto kr = kr_scale_ddf(spec, sol, contrast, *sigma,
                                   opts.method == InferenceMethod::KR ? KrVariant::Plain : KrVariant::Modified);
      res.flags.insert(res.flags.end(), kr.flags.begin(), kr.flags.end());
      finish_f(kr.kappa, kr.nu);
      break;
    }
  }
  return res;
}

inline InferenceResult infer(const LmmSpec& spec, const VcEstimate& fit, const ContrastSet& contrast,
                             const InferenceOptions& opts) {
  return infer(spec, fit.sigma2_hat, fit.sigma_cov_hat, contrast, opts);
}

}  // namespace hmme

#endif  // HMME_INFERENCE_HPP
