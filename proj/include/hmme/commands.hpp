#ifndef HMME_COMMANDS_HPP
#define HMME_COMMANDS_HPP

#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "hmme/design.hpp"
#include "hmme/error.hpp"
#include "hmme/inference.hpp"
#include "hmme/io.hpp"
#include "hmme/varcomp.hpp"

// The three subcommands behind the hmme tool. Each returns the process exit
// code and never throws; diagnostics go to `err`, the summary to `out`.

namespace hmme::cli {

struct FitArgs {
  std::string data;
  std::string model;
  std::string method = "reml";
  std::string out;
  double eps = 1e-8;
  int max_iter = 500;
  std::optional<std::string> start;
  std::optional<std::string> prior;
};

struct InferArgs {
  std::string fit;
  std::string contrast;
  std::string method = "kr-modified";
  std::optional<std::string> w0;
  double level = 0.95;
  std::string out;
};

struct SimulateArgs {
  std::string factors;
  int reps = 1;
  std::string sigma2;
  double intercept = 0.0;
  std::uint64_t seed = 1;
  std::string out;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kInputError = 1;
inline constexpr int kNotConverged = 2;
inline constexpr int kDfUndefined = 3;
}  // namespace exit_code

/// Fits the model; the artifact is written even when the iteration did not converge.
inline int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  try {
    const Table table = io::read_csv(a.data);
    const ModelDescription model = io::model_from_json(io::parse_json(io::read_file(a.model), "model file"));
    const LmmSpec spec = build_from_table(table, model);
    validate_spec(spec);

    const VcMethod method = parse_vc_method(a.method);
    EstimationOptions opts;
    opts.eps = a.eps;
    opts.max_iter = a.max_iter;
    if (a.start) opts.start = io::parse_number_list(*a.start, "--start");
    std::optional<VarComponents> prior;
    if (a.prior) prior = VarComponents(io::parse_number_list(*a.prior, "--prior"));
    if ((method == VcMethod::MinqeI || method == VcMethod::MinqeUI) && !prior) {
      throw Error(ErrorCode::InvalidArgument, "--prior is required for MINQE methods");
    }
    if (prior && prior->s() != spec.s()) {
      throw Error(ErrorCode::DimensionMismatch, "--prior needs s+1 = " + std::to_string(spec.s() + 1) + " values");
    }

    const VcEstimate est = estimate(spec, method, opts, prior);
    const io::FitArtifact artifact = io::make_artifact(spec, model, est, opts, prior);
    io::write_file(a.out, io::dump(io::artifact_to_json(artifact)));

    out << "method: " << to_string(method) << "\n";
    out << "n = " << spec.n() << ", p = " << spec.p() << ", s = " << spec.s() << ", r = " << spec.r() << "\n";
    out << std::setprecision(10);
    for (Index i = 0; i < spec.s(); ++i) {
      out << "sigma2[" << spec.factor_names()[static_cast<std::size_t>(i)] << "] = " << est.sigma2_hat[i] << "\n";
    }
    out << "sigma2[error] = " << est.sigma2_hat.error_variance() << "\n";
    if (est.loglik) out << "loglik = " << *est.loglik << "\n";
    out << "iterations = " << est.iterations << (est.converged ? " (converged)" : " (NOT converged)") << "\n";
    if (est.boundary) out << "warning: variance floor hit for component(s) on the boundary\n";
    if (!est.identifiable()) out << "warning: information matrix singular; Sigma_hat withheld\n";
    if (est.non_unique) out << "warning: MINQE system singular; minimum-norm solution reported\n";
    out << "wrote " << a.out << "\n";
    return est.converged ? exit_code::kOk : exit_code::kNotConverged;
  } catch (const std::exception& e) {
    err << "hmme fit: " << e.what() << "\n";
    return exit_code::kInputError;
  }
}

inline void print_report(const InferenceResult& r, std::ostream& out) {
  out << std::setprecision(10);
  out << "method: " << to_string(r.method) << "\n";
  for (Index k = 0; k < r.w_hat.size(); ++k) out << "w_hat[" << k + 1 << "] = " << r.w_hat(k) << "\n";
  out << r.statistic_kind << " = " << r.statistic << "\n";
  out << "df = " << r.df_num << ", " << r.df << "\n";
  out << "kappa = " << r.kappa << "\n";
  out << "p = " << r.p_value << "\n";
  if (r.interval) {
    out << r.level * 100 << "% interval: [" << r.interval->lower << ", " << r.interval->upper << "]\n";
  } else {
    out << r.level * 100 << "% region: ellipsoid, radius^2 = " << r.region.radius2 << "\n";
  }
  for (const auto& f : r.flags) out << "flag: " << f << "\n";
}

/// Runs inference from a fit artifact. Exit 3 writes a partial report with the failure flag.
inline int cmd_infer(const InferArgs& a, std::ostream& out, std::ostream& err) {
  std::optional<LmmSpec> spec;
  std::optional<io::ContrastFile> cf;
  std::optional<io::FitArtifact> fit;
  InferenceOptions opts;
  try {
    fit = io::artifact_from_json(io::parse_json(io::read_file(a.fit), "fit file"));
    spec = fit->spec();
    cf = io::contrast_from_json(io::parse_json(io::read_file(a.contrast), "contrast file"), *spec);
    opts.method = parse_inference_method(a.method);
    opts.level = a.level;
    opts.w0 = cf->w0;
    if (a.w0) opts.w0 = io::parse_number_list(*a.w0, "--w0");
    require_estimable(cf->contrast.K(), spec->X());
  } catch (const std::exception& e) {
    err << "hmme infer: " << e.what() << "\n";
    return exit_code::kInputError;
  }

  try {
    const InferenceResult r = infer(*spec, VarComponents(fit->sigma2_hat), fit->sigma_cov_hat, cf->contrast, opts);
    io::write_file(a.out, io::dump(io::report_to_json(r, cf->contrast)));
    print_report(r, out);
    out << "wrote " << a.out << "\n";
    return exit_code::kOk;
  } catch (const Error& e) {
    const bool df_problem = e.code() == ErrorCode::DfUndefined || e.code() == ErrorCode::ZeroVarianceOfVariance ||
                            e.code() == ErrorCode::NotPositiveSemidefinite;
    if (!df_problem) {
      err << "hmme infer: " << e.what() << "\n";
      return exit_code::kInputError;
    }
    err << "hmme infer: " << e.what() << "\n";
    try {
      const MmeSolution sol = solve_mme(*spec, VarComponents(fit->sigma2_hat));
      io::json partial = {{"format_version", io::kFormatVersion},
                          {"method", std::string(to_string(opts.method))},
                          {"w_hat", io::to_json(blup(*spec, sol, cf->contrast))},
                          {"mse_plugin", io::to_json(mse_blup(*spec, sol, cf->contrast))},
                          {"complete", false},
                          {"flags", {std::string(to_string(e.code())), e.what()}}};
      io::write_file(a.out, io::dump(partial));
    } catch (const std::exception& e2) {
      err << "hmme infer: partial report failed: " << e2.what() << "\n";
    }
    return exit_code::kDfUndefined;
  } catch (const std::exception& e) {
    err << "hmme infer: " << e.what() << "\n";
    return exit_code::kInputError;
  }
}

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  try {
    io::SimulationDesign d;
    d.factors = io::parse_factor_list(a.factors);
    d.reps = a.reps;
    d.sigma2 = io::parse_number_list(a.sigma2, "--sigma2");
    d.intercept = a.intercept;
    d.seed = a.seed;
    const std::string csv = io::simulate_csv(d);
    io::write_file(a.out, csv);
    out << "wrote " << a.out << "\n";
    return exit_code::kOk;
  } catch (const std::exception& e) {
    err << "hmme simulate: " << e.what() << "\n";
    return exit_code::kInputError;
  }
}

}  // namespace hmme::cli

#endif  // HMME_COMMANDS_HPP
