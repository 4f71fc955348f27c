// Simulates a balanced one-way layout, fits it by REML and compares the
// small-sample inference methods for the grand mean and for one group effect.

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>

#include "hmme/hmme.hpp"
#include "hmme/io.hpp"

using namespace hmme;

int main() {
  io::SimulationDesign d;
  d.factors = {{"g", 6}};
  d.reps = 4;
  d.sigma2 = (VectorXd(2) << 2.0, 1.0).finished();
  d.intercept = 10.0;
  d.seed = 7;

  const auto model = io::model_from_json(io::parse_json(R"({"response": "y", "fixed": ["intercept"], "random": ["g"]})", "model"));
  const LmmSpec spec = build_from_table(io::parse_csv(io::simulate_csv(d)), model);

  const VcEstimate est = estimate_reml(spec);
  std::printf("REML: sigma2_g = %.4f, sigma2_e = %.4f (%d iterations%s)\n", est.sigma2_hat[0],
              est.sigma2_hat.error_variance(), est.iterations, est.boundary ? ", boundary" : "");

  // grand mean, then intercept plus the first group's effect
  VectorXd l = VectorXd::Zero(spec.r());
  const ContrastSet mean = ContrastSet::single(VectorXd::Ones(1), l);
  l(0) = 1.0;
  const ContrastSet group = ContrastSet::single(VectorXd::Ones(1), l);

  const InferenceMethod methods[] = {InferenceMethod::ExactChisq, InferenceMethod::Satterthwaite,
                                     InferenceMethod::FaiCornelius, InferenceMethod::KR, InferenceMethod::KRModified};
  for (const auto& [name, c] : {std::pair{"grand mean", mean}, std::pair{"mean of g1", group}}) {
    std::printf("\n%s\n", name);
    std::printf("  %-14s %9s %9s %9s %8s %21s\n", "method", "estimate", "sqrt MSE", "df", "kappa", "95% interval");
    for (const auto m : methods) {
      InferenceOptions o;
      o.method = m;
      o.w0 = VectorXd::Constant(1, 10.0);
      try {
        const InferenceResult r = infer(spec, est, c, o);
        std::printf("  %-14s %9.4f %9.4f %9.3f %8.4f  [%8.4f, %8.4f]\n", std::string(to_string(m)).c_str(), r.w_hat(0),
                    std::sqrt(r.mse_used(0, 0)), r.df, r.kappa, r.interval->lower, r.interval->upper);
      } catch (const Error& e) {
        std::printf("  %-14s %s\n", std::string(to_string(m)).c_str(), e.what());
      }
    }
  }
}
