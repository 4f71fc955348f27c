// Acceptance run: one PASS/FAIL line per criterion, with wall time.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "cli_pipeline.hpp"
#include "hmme/hmme.hpp"
#include "montecarlo.hpp"
#include "oracles.hpp"

using namespace hmme;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// keeps the worst observed value and the first failure message
struct Tracker {
  Outcome out;
  void require(bool cond, const std::string& what) {
    if (!cond && out.pass) {
      out.pass = false;
      out.detail = what;
    }
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double rel_max(const MatrixXd& a, const MatrixXd& b) { return linalg::max_abs(a - b) / std::max(linalg::max_abs(b), 1e-12); }

MatrixXd random_psd(std::mt19937_64& rng, Index k, double scale) {
  std::normal_distribution<double> normal;
  MatrixXd a(k, k);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  return scale * a * a.transpose() / static_cast<double>(k);
}

Outcome gls_blup_equivalence() {
  Tracker t;
  std::mt19937_64 rng(1001);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto& spec = inst.spec;
    const auto sol = solve_mme(spec, inst.vc);
    const double scale = 1.0 + spec.y().norm();
    const double gb = (sol.b_tilde - oracle::gls_beta(spec, inst.vc, spec.y())).norm() / scale;
    const double gu = (sol.u_tilde - oracle::blup_u(spec, inst.vc, spec.y())).norm() / scale;
    worst = std::max({worst, gb, gu});
  }
  t.require(worst <= 1e-9, "max relative gap " + fmt(worst));
  if (t.out.pass) t.out.detail = "50 instances, max relative gap " + fmt(worst);
  return t.out;
}

Outcome derivative_correctness() {
  Tracker t;
  std::mt19937_64 rng(1002);
  double worst_g = 0.0;
  double worst_h = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto contrast = oracle::random_contrast(rng, inst.spec, 1 + rep % 3);
    const MatrixXd lam = contrast.Lambda();
    const VectorXd x = inst.vc.values();
    auto m_at = [&](const VectorXd& v) { return oracle::mse_at(inst.spec, v, lam); };
    const Index k = inst.spec.s() + 1;
    const auto b = mse_bundle(inst.spec, solve_mme(inst.spec, inst.vc), contrast, MatrixXd::Zero(k, k));
    // Hessian blocks can vanish identically; judge them against the largest block
    double hess_scale = 1e-12;
    for (const auto& row : b.hess) {
      for (const auto& h : row) hess_scale = std::max(hess_scale, linalg::max_abs(h));
    }
    for (Index i = 0; i < k; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      worst_g = std::max(worst_g, rel_max(oracle::central_diff(m_at, x, i, 1e-5 * x(i)), b.grad[ui]));
      for (Index j = 0; j < k; ++j) {
        const MatrixXd fd = oracle::central_diff2(m_at, x, i, j, 1e-3 * x(i), 1e-3 * x(j));
        worst_h = std::max(worst_h, linalg::max_abs(fd - b.hess[ui][static_cast<std::size_t>(j)]) / hess_scale);
      }
    }
  }
  t.require(worst_g <= 1e-6, "gradient relative error " + fmt(worst_g));
  t.require(worst_h <= 1e-4, "Hessian relative error " + fmt(worst_h));
  if (t.out.pass) t.out.detail = "20 instances, gradient " + fmt(worst_g) + ", Hessian " + fmt(worst_h);
  return t.out;
}

Outcome route_equivalence() {
  Tracker t;
  std::mt19937_64 rng(1003);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto contrast = oracle::random_contrast(rng, inst.spec, 1 + rep % 3);
    const Index k = inst.spec.s() + 1;
    const MatrixXd sigma = random_psd(rng, k, 0.5);
    const auto sol = solve_mme(inst.spec, inst.vc);
    try {
      const auto b = mse_bundle(inst.spec, sol, contrast, sigma);
      MatrixXd via = MatrixXd::Zero(contrast.q(), contrast.q());
      for (Index i = 0; i < k; ++i) {
        for (Index j = 0; j < k; ++j) via += sigma(i, j) * b.hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
      worst = std::max(worst, linalg::max_abs(b.m_delta + 0.5 * via) / (1.0 + linalg::max_abs(b.m_delta)));
      t.require(cross_derivative_identity_check(inst.spec, sol, contrast), "cross-derivative identity failed");
    } catch (const Error& e) {
      t.require(false, e.what());
    }
  }
  t.require(worst <= 1e-9, "route gap " + fmt(worst));
  if (t.out.pass) t.out.detail = "50 instances, route gap " + fmt(worst) + ", identities hold";
  return t.out;
}

Outcome fisher_consistency() {
  Tracker t;
  std::mt19937_64 rng(1004);
  double worst = 0.0;
  double worst_h = 0.0;
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = oracle::random_instance(rng);
    worst = std::max(worst, rel_max(fisher_ml(inst.spec, inst.vc), oracle::trace_fisher_ml(inst.spec, inst.vc)));
    worst = std::max(worst, rel_max(fisher_reml(inst.spec, inst.vc), oracle::trace_fisher_reml(inst.spec, inst.vc)));
    const auto mi = minqe(inst.spec, inst.vc, MinqeKind::I);
    const auto mui = minqe(inst.spec, inst.vc, MinqeKind::UI);
    worst_h = std::max(worst_h, linalg::max_abs(*mi.minqe_matrix - 2.0 * fisher_ml(inst.spec, inst.vc)));
    worst_h = std::max(worst_h, linalg::max_abs(*mui.minqe_matrix - 2.0 * fisher_reml(inst.spec, inst.vc)));
  }
  t.require(worst <= 1e-9, "information vs trace oracle " + fmt(worst));
  t.require(worst_h <= 1e-12, "MINQE matrix vs 2 I " + fmt(worst_h));
  if (t.out.pass) t.out.detail = "trace-oracle gap " + fmt(worst) + ", MINQE gap " + fmt(worst_h);
  return t.out;
}

Outcome balanced_one_way() {
  Tracker t;
  const VectorXd y = oracle::simulate_one_way(2025, 4, 5, 2.0, 1.0);
  const auto anova = oracle::one_way_anova(y, 4, 5);
  t.require(anova.msa > anova.mse, "seeded draw has MSA <= MSE");
  const LmmSpec spec = oracle::one_way(y, 4, 5);
  EstimationOptions o;
  o.eps = 1e-13;
  o.max_iter = 10000;
  const auto est = estimate_reml(spec, o);
  t.require(est.converged && !est.boundary && est.sigma_cov_hat.has_value(), "REML did not reach an interior solution");
  if (!t.out.pass) return t.out;
  const double ge = std::abs(est.sigma2_hat.error_variance() - anova.mse);
  const double ga = std::abs(est.sigma2_hat[0] - (anova.msa - anova.mse) / 5.0);
  t.require(ge <= 1e-8 && ga <= 1e-8, "REML vs ANOVA gaps " + fmt(ge) + ", " + fmt(ga));
  const auto sol = solve_mme(spec, est.sigma2_hat);
  const auto c = ContrastSet::single(VectorXd::Ones(1), VectorXd::Zero(4));
  const auto sd = satterthwaite_df(spec, sol, c, *est.sigma_cov_hat);
  t.require(std::abs(sd.nu - 3.0) <= 1e-6, "Satterthwaite df " + fmt(sd.nu));
  try {
    const auto kr = kr_scale_ddf(spec, sol, c, *est.sigma_cov_hat, KrVariant::Modified);
    t.require(std::abs(kr.kappa - 1.0) <= 1e-6 && std::abs(kr.nu - 3.0) <= 1e-6,
              "modified KR (kappa, nu) = (" + fmt(kr.kappa) + ", " + fmt(kr.nu) + ")");
    if (t.out.pass) {
      std::ostringstream ss;
      ss.precision(10);
      ss << "REML = ANOVA, nu_S = " << sd.nu << ", (kappa*, nu*) = (" << kr.kappa << ", " << kr.nu << ")";
      t.out.detail = ss.str();
    }
  } catch (const Error& e) {
    t.require(false, e.what());
  }
  return t.out;
}

Outcome reductions() {
  Tracker t;
  std::mt19937_64 rng(1006);
  double worst_fc = 0.0;
  int fc_checked = 0;
  for (int rep = 0; rep < 40; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto c = oracle::random_contrast(rng, inst.spec, 1);
    const MatrixXd sigma = random_psd(rng, inst.spec.s() + 1, 0.05);
    const auto sol = solve_mme(inst.spec, inst.vc);
    const auto sd = satterthwaite_df(inst.spec, sol, c, sigma);
    if (sd.nu <= 2.0) continue;
    const auto fc = fai_cornelius_ddf(inst.spec, sol, c, sigma);
    worst_fc = std::max(worst_fc, std::abs(fc.nu - sd.nu) / std::max(1.0, sd.nu));
    ++fc_checked;
  }
  t.require(fc_checked >= 10, "too few instances with nu > 2");
  t.require(worst_fc <= 1e-12, "FC vs Satterthwaite " + fmt(worst_fc));

  const VectorXd y = oracle::simulate_one_way(2025, 4, 5, 2.0, 1.0);
  const LmmSpec spec = oracle::one_way(y, 4, 5);
  const auto est = estimate_reml(spec);
  InferenceOptions o;
  o.w0 = VectorXd::Constant(1, 4.0);
  const auto c1 = ContrastSet::single(VectorXd::Ones(1), VectorXd::Zero(4));
  o.method = InferenceMethod::Satterthwaite;
  const auto tr = infer(spec, est, c1, o);
  o.method = InferenceMethod::FaiCornelius;
  const auto fr = infer(spec, est, c1, o);
  const double ft = std::abs(fr.statistic - tr.statistic * tr.statistic) / (1.0 + fr.statistic);
  t.require(ft <= 1e-12, "F vs t^2 " + fmt(ft));

  MatrixXd l = MatrixXd::Zero(4, 2);
  l(0, 0) = 1.0;
  l(2, 1) = 1.0;
  const ContrastSet c2(MatrixXd::Ones(1, 2), l);
  o.w0 = (VectorXd(2) << 4.0, 6.0).finished();
  o.method = InferenceMethod::ExactChisq;
  const double p_exact = infer(spec, est.sigma2_hat, std::nullopt, c2, o).p_value;
  double worst_p = 0.0;
  double worst_k = 0.0;
  for (auto m : {InferenceMethod::KR, InferenceMethod::KRModified}) {
    o.method = m;
    const auto r = infer(spec, est.sigma2_hat, MatrixXd(1e-6 * *est.sigma_cov_hat), c2, o);
    worst_p = std::max(worst_p, std::abs(r.p_value - p_exact));
    worst_k = std::max(worst_k, std::abs(r.kappa - 1.0));
  }
  t.require(worst_p < 1e-3, "p gap at eps = 1e-6: " + fmt(worst_p));
  if (t.out.pass) {
    t.out.detail = "FC-S " + fmt(worst_fc) + ", F-t^2 " + fmt(ft) + ", |kappa-1| " + fmt(worst_k) + ", p gap " + fmt(worst_p);
  }
  return t.out;
}

Outcome monte_carlo() {
  Tracker t;
  const auto rep = mc::mme_moments(20240501, 100000);
  for (const auto& m : rep.moments) t.require(m.z() <= 5.0, m.what + " off by " + fmt(m.z()) + " SE");
  if (t.out.pass) t.out.detail = std::to_string(rep.moments.size()) + " moments, worst " + fmt(rep.worst_z()) + " SE";
  return t.out;
}

Outcome psd_properties() {
  Tracker t;
  std::mt19937_64 rng(1008);
  double worst = 0.0;
  for (int rep = 0; rep < 40; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto c = oracle::random_contrast(rng, inst.spec, 1 + rep % 3);
    const Index k = inst.spec.s() + 1;
    const MatrixXd sigma = random_psd(rng, k, 0.5);
    const auto sol = solve_mme(inst.spec, inst.vc);
    const auto b = mse_bundle(inst.spec, sol, c, sigma);
    for (const auto& g : b.grad) worst = std::min(worst, linalg::eigen_range(g).first / (1.0 + linalg::max_abs(g)));
    const double md = linalg::eigen_range(b.m_delta).first;
    t.require(md >= -1e-10, "M_delta eigenvalue " + fmt(md));
    try {
      const auto adj = adjusted_mse(inst.spec, sol, c, sigma);
      const double gap = linalg::eigen_range(adj.matrix - mse_blup(inst.spec, sol, c)).first;
      t.require(gap >= -1e-10, "adjusted - plug-in eigenvalue " + fmt(gap));
    } catch (const Error& e) {
      t.require(false, e.what());
    }
  }
  t.require(worst >= -1e-10, "M^(i) eigenvalue " + fmt(worst));
  if (t.out.pass) t.out.detail = "40 instances, all PSD";
  return t.out;
}

Outcome minqe_fixed_point() {
  Tracker t;
  std::mt19937_64 rng(1009);
  EstimationOptions o;
  o.eps = 1e-13;
  o.max_iter = 20000;
  double worst = 0.0;
  int checked = 0;
  for (int rep = 0; rep < 60 && checked < 20; ++rep) {
    auto inst = oracle::random_instance(rng, 2);
    const auto est = estimate_reml(inst.spec, o);
    if (!est.converged || est.boundary) continue;
    const auto step = minqe(inst.spec, est.sigma2_hat, MinqeKind::UI);
    worst = std::max(worst, (step.sigma2_unconstrained - est.sigma2_hat.values()).cwiseAbs().maxCoeff() /
                                (1.0 + est.sigma2_hat.values().cwiseAbs().maxCoeff()));
    ++checked;
  }
  t.require(checked >= 10, "too few interior REML fits");
  t.require(worst <= 1e-8, "MINQE step moved by " + fmt(worst));
  if (t.out.pass) t.out.detail = std::to_string(checked) + " interior fits, max move " + fmt(worst);
  return t.out;
}

Outcome cli_end_to_end() {
  Tracker t;
  for (const char* m : {"kr-modified", "fai-cornelius"}) {
    try {
      const auto c = pipeline::end_to_end(m);
      t.require(c.ok, c.detail);
      if (t.out.pass) t.out.detail = c.detail;
    } catch (const std::exception& e) {
      t.require(false, e.what());
    }
  }
  return t.out;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"gls-blup-equivalence", gls_blup_equivalence},
      {"derivative-correctness", derivative_correctness},
      {"route-equivalence", route_equivalence},
      {"fisher-consistency", fisher_consistency},
      {"balanced-one-way-anchor", balanced_one_way},
      {"reductions", reductions},
      {"monte-carlo-moments", monte_carlo},
      {"psd-properties", psd_properties},
      {"minqe-fixed-point", minqe_fixed_point},
      {"cli-end-to-end", cli_end_to_end},
  };
  int failed = 0;
  int idx = 0;
  for (const auto& c : criteria) {
    ++idx;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-4s %2d %-26s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", idx, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d/%d criteria passed\n", idx - failed, idx);
  return failed == 0 ? 0 : 1;
}
