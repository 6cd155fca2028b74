#include <CLI11.hpp>

#include "kwt/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Self-similar profiles of the four-wave kinetic equation: stable laws, regularized evolution, "
               "profile solvers and diagnostics"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  kwt::run_request rq;
  app.add_option("--config", rq.config_path, "flat 'section.key = value' configuration file");
  app.add_option("--out", rq.out_dir, "output directory")->capture_default_str();
  app.add_option("--threads", rq.threads, "worker threads (results do not depend on it)")->capture_default_str();

  app.add_subcommand("stable", "tabulate symmetric stable densities and check their invariants");
  app.add_subcommand("evolve", "run the regularized evolution from the power-law seed");
  app.add_subcommand("profile", "compute a self-similar profile and its diagnostics");
  auto* verify = app.add_subcommand("verify", "recompute residuals and diagnostics of a stored profile");
  auto* diagnose = app.add_subcommand("diagnose", "diagnostics report for a stored profile");
  verify->add_option("profile", rq.profile, "profile CSV (sidecar JSON alongside)");
  diagnose->add_option("profile", rq.profile, "profile CSV (sidecar JSON alongside)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kwt::exit_parameter;
  }
  rq.command = app.get_subcommands().front()->get_name();
  return kwt::run_command(rq);
}
