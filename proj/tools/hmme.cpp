#include <CLI11.hpp>

#include <iostream>

#include "hmme/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Linear mixed models via Henderson's equations: fit, infer, simulate"};
  app.require_subcommand(1);

  hmme::cli::FitArgs fit;
  std::string start;
  std::string prior;
  auto* f = app.add_subcommand("fit", "estimate variance components and write a fit artifact");
  f->add_option("--data", fit.data, "CSV file with header")->required();
  f->add_option("--model", fit.model, "model description (JSON)")->required();
  f->add_option("--method", fit.method, "ml | reml | minqe-i | minqe-ui")->capture_default_str();
  f->add_option("--out", fit.out, "fit artifact to write")->required();
  f->add_option("--eps", fit.eps, "stopping tolerance (sup norm)")->capture_default_str();
  f->add_option("--max-iter", fit.max_iter, "iteration limit")->capture_default_str();
  auto* start_opt = f->add_option("--start", start, "starting values, comma separated (s+1)");
  auto* prior_opt = f->add_option("--prior", prior, "MINQE prior, comma separated (s+1)");

  hmme::cli::InferArgs inf;
  std::string w0;
  auto* i = app.add_subcommand("infer", "test or predict a linear function of fixed and random effects");
  i->add_option("--fit", inf.fit, "fit artifact")->required();
  i->add_option("--contrast", inf.contrast, "contrast file (JSON)")->required();
  i->add_option("--method", inf.method, "satterthwaite | fai-cornelius | kr | kr-modified | exact-chisq")
      ->capture_default_str();
  auto* w0_opt = i->add_option("--w0", w0, "null value, comma separated (q)");
  i->add_option("--level", inf.level, "confidence level")->capture_default_str();
  i->add_option("--out", inf.out, "report to write")->required();

  hmme::cli::SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "draw a crossed random-effects dataset");
  s->add_option("--factors", sim.factors, "crossed factors, e.g. a:4,b:3")->required();
  s->add_option("--reps", sim.reps, "replicates per cell")->capture_default_str();
  s->add_option("--sigma2", sim.sigma2, "true variances, factors then error")->required();
  s->add_option("--intercept", sim.intercept, "true intercept")->capture_default_str();
  s->add_option("--seed", sim.seed, "random seed")->capture_default_str();
  s->add_option("--out", sim.out, "CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : hmme::cli::exit_code::kInputError;
  }

  if (f->parsed()) {
    if (*start_opt) fit.start = start;
    if (*prior_opt) fit.prior = prior;
    return hmme::cli::cmd_fit(fit, std::cout, std::cerr);
  }
  if (i->parsed()) {
    if (*w0_opt) inf.w0 = w0;
    return hmme::cli::cmd_infer(inf, std::cout, std::cerr);
  }
  return hmme::cli::cmd_simulate(sim, std::cout, std::cerr);
}
