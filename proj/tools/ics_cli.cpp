#include <CLI11.hpp>

#include <iostream>

#include "ics.hpp"

namespace io = ics::io;

namespace {

int fail(int code, const std::string& what) {
  std::cerr << "ics: " << what << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative covariance steering: solve, simulate and report"};
  app.require_subcommand(1);

  std::string solve_config;
  auto* solve = app.add_subcommand("solve", "run the iCS loop and write the policy");
  solve->add_option("config", solve_config, "run configuration (JSON)")->required();

  std::string sim_config, policy;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo validation of a stored policy");
  simulate->add_option("config", sim_config, "run configuration (JSON)")->required();
  simulate->add_option("--policy", policy, "policy.json written by solve")->required();
  simulate->add_option("--trials", trials, "override simulation.trials")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", seed, "override simulation.seed");

  std::string rundir;
  auto* report = app.add_subcommand("report", "print the summary of a run directory");
  report->add_option("rundir", rundir, "directory holding the run reports")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : io::exit_code::parse_error;
  }

  try {
    if (*solve) {
      const auto cfg = io::load_config(solve_config);
      const auto dir = io::resolve_output_dir(cfg);
      const auto out = io::run_solve(cfg, dir);
      std::cout << io::emit_report(out.report);
      std::cout << "\noutput: " << dir << "\n";
      return out.exit_code;
    }
    if (*simulate) {
      const auto cfg = io::load_config(sim_config);
      const auto dir = io::resolve_output_dir(cfg);
      const auto out = io::run_simulate(cfg, policy, dir, trials, seed);
      std::cout << io::emit_report(out.report);
      std::cout << "\noutput: " << dir << "\n";
      return out.exit_code;
    }
    std::cout << io::emit_report(io::load_report(rundir));
    return io::exit_code::ok;
  } catch (const ics::InvalidArgument& e) {
    return fail(io::exit_code::parse_error, e.what());
  } catch (const ics::SimulationError& e) {
    return fail(io::exit_code::simulation_failure, e.what());
  } catch (const std::exception& e) {
    return fail(io::exit_code::solve_failure, e.what());
  }
}
