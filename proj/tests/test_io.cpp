#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ics.hpp"

using namespace ics;
using namespace ics::io;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = std::string(ICS_SOURCE_DIR) + "/configs/";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ics_test_" + name);
  fs::remove_all(p);
  return p;
}

const char* kMinimal = R"({
  "model": {"kind": "drag_double_integrator", "c_d": 0.0, "gamma": 0.1},
  "horizon": {"N": 4, "sigma": 2},
  "boundary": {"x0_mean": [0, 0, 0, 0], "P_x0": [[0.01,0,0,0],[0,0.01,0,0],[0,0,0.01,0],[0,0,0,0.01]],
               "xf_mean": [1, 1, 0, 0], "P_xf": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]},
  "cost": {"Qx": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "Qu": [[1,0],[0,1]]}
})";

std::string with(const std::string& base, const std::string& ptr, const Json& value) {
  Json j = Json::parse(base);
  j[Json::json_pointer(ptr)] = value;
  return j.dump();
}

std::string error_path(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

RunConfig small_linear() {
  RunConfig c = load_config(kConfigs + "linear_di.json");
  c.simulation.trials = 400;
  return c;
}

}  // namespace

TEST(Config, ShippedDragExampleCarriesPaperValues) {
  const RunConfig c = load_config(kConfigs + "drag_di.json");
  EXPECT_EQ(c.model.kind, "drag_double_integrator");
  EXPECT_DOUBLE_EQ(c.model.c_d, 0.005);
  EXPECT_DOUBLE_EQ(c.model.gamma, 0.01);
  EXPECT_EQ(c.horizon.N, 25);
  EXPECT_DOUBLE_EQ(c.horizon.sigma, 15.0);
  EXPECT_DOUBLE_EQ(c.cost.w_xf, 1000.0);
  EXPECT_EQ(to_mat(c.cost.Qx), 5.0 * Mat::Identity(4, 4));
  EXPECT_EQ(to_mat(c.cost.Qu), Mat::Identity(2, 2));
  EXPECT_EQ(to_mat(c.cost.mean.Ru), 10.0 * Mat::Identity(2, 2));
  EXPECT_EQ(to_vec(c.boundary.x0_mean), (Vec(4) << 1, 8, 2, 0).finished());
  EXPECT_EQ(to_vec(c.boundary.xf_mean), (Vec(4) << 1, 2, -1, 0).finished());
  EXPECT_EQ(to_mat(c.boundary.P_x0), 0.01 * Mat::Identity(4, 4));
  EXPECT_EQ(to_mat(c.boundary.P_xf), 0.1 * Mat::Identity(4, 4));
  ASSERT_EQ(c.ics.initial_guess.size(), 1u);
  EXPECT_EQ(c.ics.initial_guess[0], (Vector{-0.3, -0.1}));

  const auto spec = make_problem(c);
  EXPECT_TRUE(spec.state_constraints[0].empty());
  for (int k = 1; k <= 25; ++k) {
    ASSERT_EQ(spec.state_constraints[k].size(), 2u);
    for (const auto& h : spec.state_constraints[k]) {
      EXPECT_DOUBLE_EQ(h.risk, 0.05);
      EXPECT_DOUBLE_EQ(h.offset, 6.0);
    }
  }
  EXPECT_NEAR((spec.mean_cost.S_u.transpose() * spec.mean_cost.S_u - 10.0 * Mat::Identity(2, 2)).norm(), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(spec.weights.scale, 15.0 / 25.0);
  EXPECT_EQ(make_initial_guess(c).size(), 25u);
}

TEST(Config, MinimalConfigGetsDefaults) {
  const RunConfig c = parse_config(kMinimal);
  const RunConfig d;
  EXPECT_EQ(c.ics, d.ics);
  EXPECT_EQ(c.simulation, d.simulation);
  EXPECT_EQ(c.cost.w_xf, 1000.0);
  EXPECT_EQ(c.output_dir, "runs");
  EXPECT_TRUE(c.constraints.state.empty());
  EXPECT_EQ(c.simulation.substeps, 200);
  EXPECT_EQ(c.ics.substeps, 10);
  const auto guess = make_initial_guess(c);
  ASSERT_EQ(guess.size(), 4u);
  EXPECT_EQ(guess[0], Vec::Zero(2));
}

TEST(Config, ErrorsNameTheOffendingField) {
  EXPECT_EQ(error_path(with(kMinimal, "/horizon/N", -3)), "/horizon/N");
  EXPECT_EQ(error_path(with(kMinimal, "/horizon/sigma", "fast")), "/horizon/sigma");
  EXPECT_EQ(error_path(with(kMinimal, "/horizon/extra", 1)), "/horizon/extra");
  EXPECT_EQ(error_path(with(kMinimal, "/boundary/P_xf/0/0", 0.0)), "/boundary/P_xf");
  EXPECT_EQ(error_path(with(kMinimal, "/boundary/x0_mean", Json::array({1, 2}))), "/boundary/x0_mean");
  EXPECT_EQ(error_path(with(kMinimal, "/boundary/P_x0/2", Json::array({0, 0}))), "/boundary/P_x0/2");
  EXPECT_EQ(error_path(with(kMinimal, "/model/kind", "unicycle")), "/model/kind");
  EXPECT_EQ(error_path(with(kMinimal, "/ics/terminal_policy", "sometimes")), "/ics/terminal_policy");
  EXPECT_EQ(error_path(with(kMinimal, "/simulation/trials", 0)), "/simulation/trials");
  Json bad_group = {{"halfspaces", {{{"normal", {1, 0, 0, 0}}, {"offset", 2}}}}, {"risk", 0.7}};
  EXPECT_EQ(error_path(with(kMinimal, "/constraints/state", Json::array({bad_group}))),
            "/constraints/state/0/risk");
  Json bad_steps = {{"halfspaces", {{{"normal", {1, 0, 0, 0}}, {"offset", 2}}}},
                    {"risk", 0.1},
                    {"steps", {0, 9}}};
  EXPECT_EQ(error_path(with(kMinimal, "/constraints/state", Json::array({bad_steps}))),
            "/constraints/state/0/steps/1");
  Json no_cost = Json::parse(kMinimal);
  no_cost.erase("cost");
  EXPECT_EQ(error_path(no_cost.dump()), "/cost");
  EXPECT_EQ(error_path("{not json"), "");
}

TEST(Config, NegativeHorizonMessageMentionsField) {
  try {
    parse_config(with(kMinimal, "/horizon/N", -1));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/horizon/N"), std::string::npos);
  }
}

TEST(Config, EmitParseRoundTrip) {
  std::vector<RunConfig> configs = {load_config(kConfigs + "drag_di.json"),
                                    load_config(kConfigs + "linear_di.json"), parse_config(kMinimal)};
  Json lin = Json::parse(kMinimal);
  lin["model"] = {{"kind", "linear"},
                  {"A", {{0, 1}, {0, 0}}},
                  {"B", {{0}, {1}}},
                  {"G", {{0}, {0.3}}}};
  lin["boundary"] = {{"x0_mean", {0, 0}}, {"P_x0", {{0.1, 0}, {0, 0.1}}}, {"xf_mean", {1, 0}},
                     {"P_xf", {{0.5, 0.1}, {0.1, 0.5}}}};
  lin["cost"] = {{"mean", {{"Rx", {{1, 0}, {0, 0}}}, {"x_ref", {1, 0}}, {"q_u", {0.5}}}},
                 {"Qx", {{1, 0}, {0, 1}}},
                 {"Qu", {{2}}},
                 {"w_xf", 50}};
  lin["constraints"] = {{"control",
                         {{{"halfspaces", {{{"normal", {1}}, {"offset", 2}}, {{"normal", {-1}}, {"offset", 2}}}},
                           {"risk", 0.02},
                           {"steps", {1, 3}}}}}};
  lin["ics"] = {{"mc_seed", 18446744073709551615ull}, {"initial_guess", {{0.1}, {0.2}, {0.3}, {0.4}}}};
  lin["simulation"] = {{"ellipse_axes", {1, 0}}, {"record_full_paths", true}};
  configs.push_back(parse_config(lin.dump()));
  for (const auto& c : configs) {
    const std::string text = emit_config(c);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(back, c);
    EXPECT_EQ(emit_config(back), text);
  }
  EXPECT_EQ(configs.back().ics.mc_seed, 18446744073709551615ull);
}

TEST(Config, LinearModelAndControlGroupsExpand) {
  Json lin = Json::parse(kMinimal);
  lin["model"] = {{"kind", "linear"}, {"A", {{0, 1}, {0, 0}}}, {"B", {{0}, {1}}}, {"G", {{0}, {0.3}}}};
  lin["boundary"] = {{"x0_mean", {0, 0}}, {"P_x0", {{0.1, 0}, {0, 0.1}}}, {"xf_mean", {1, 0}},
                     {"P_xf", {{0.5, 0}, {0, 0.5}}}};
  lin["cost"] = {{"Qx", {{1, 0}, {0, 1}}}, {"Qu", {{1}}}};
  lin["constraints"] = {{"control", {{{"halfspaces", {{{"normal", {1}}, {"offset", 2}}}}, {"risk", 0.02}}}}};
  const RunConfig c = parse_config(lin.dump());
  EXPECT_EQ(c.n_x(), 2);
  EXPECT_EQ(c.n_u(), 1);
  const auto spec = make_problem(c);
  ASSERT_EQ(spec.control_constraints.size(), 4u);
  for (const auto& list : spec.control_constraints) ASSERT_EQ(list.size(), 1u);
  const auto m = make_model(c);
  EXPECT_EQ(m.diffusion(0.0), (Mat(2, 1) << 0, 0.3).finished());
}

TEST(Report, SummaryJsonRoundTrip) {
  SolveSummary s;
  s.status = "converged";
  s.converged = true;
  s.iterations = 1;
  s.objective = 1.25;
  IterationRow r;
  r.index = 1;
  r.objective = 1.25;
  r.terminal_mode = "soft";
  r.status = "optimal";
  r.retried = true;
  s.table.push_back(r);
  const auto back = solve_summary_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));

  SimulationSummary m;
  m.status = "ok";
  m.terminal_mean = {1, 2};
  m.terminal_cov = {{1, 0}, {0, 1}};
  m.violations.push_back({"state", 0, 3, 0.04, 0.1});
  m.worst = m.violations.front();
  EXPECT_EQ(to_json(simulation_summary_from_json(to_json(m))), to_json(m));
}

TEST(Report, SolveOnlyReportHasNoSimulationSection) {
  RunReport r;
  r.solve = SolveSummary{"converged", true, 0, 0.0, 0.0, "", {}};
  const std::string text = emit_report(r);
  EXPECT_NE(text.find("solve"), std::string::npos);
  EXPECT_EQ(text.find("simulation"), std::string::npos);
}

TEST(Report, NumbersUseSixSignificantDigits) {
  EXPECT_EQ(num(3.14159265358979), "3.14159");
  EXPECT_EQ(num(1234567.0), "1.23457e+06");
  EXPECT_EQ(num(0.000123456789), "0.000123457");
}

TEST(Runner, PolicyFileRoundTrip) {
  const RunConfig c = small_linear();
  const auto dir = scratch("policy");
  const auto out = run_solve(c, dir.string());
  ASSERT_EQ(out.exit_code, exit_code::ok);
  const auto pf = load_policy((dir / "policy.json").string());
  EXPECT_EQ(pf.policy.N(), 10);
  EXPECT_TRUE(pf.converged);
  const Json again = policy_to_json(pf.policy, pf.steps, pf.sigma, pf.converged);
  EXPECT_EQ(again, read_json_file((dir / "policy.json").string()));
}

TEST(Runner, SolveAndSimulateWriteManifestFiles) {
  RunConfig c = small_linear();
  c.simulation.record_full_paths = true;
  c.simulation.max_recorded_paths = 3;
  const auto dir = scratch("manifest");
  const auto solved = run_solve(c, dir.string());
  ASSERT_EQ(solved.exit_code, exit_code::ok);
  EXPECT_EQ(solved.report.manifest,
            (std::vector<std::string>{"policy.json", "iterations.csv", "reference_trajectory.csv",
                                      "solve_report.json"}));
  EXPECT_EQ(solved.report.solve->iterations, 2);  // linear dynamics: fixed point on iteration 2
  const auto sim = run_simulate(c, (dir / "policy.json").string(), dir.string());
  ASSERT_EQ(sim.exit_code, exit_code::ok);
  EXPECT_EQ(sim.report.manifest, (std::vector<std::string>{"mc_summary.json", "ellipses.csv",
                                                           "paths.csv", "simulate_report.json"}));
  for (const auto& f : sim.report.manifest) EXPECT_TRUE(fs::exists(dir / f)) << f;
  // Every CSV starts with a header row.
  for (const char* f : {"iterations.csv", "reference_trajectory.csv", "ellipses.csv", "paths.csv"}) {
    const std::string body = slurp(dir / f);
    EXPECT_TRUE(std::isalpha(static_cast<unsigned char>(body[0]))) << f;
  }
  const auto merged = load_report(dir.string());
  ASSERT_TRUE(merged.solve && merged.simulation);
  EXPECT_EQ(merged.manifest.size(), 8u);
  EXPECT_EQ(emit_report(merged), emit_report({solved.report.solve, sim.report.simulation, merged.manifest}));
}

TEST(Runner, NoiseFreeSingleTrialFollowsPlannedMean) {
  RunConfig c = small_linear();
  c.model.gamma = 0.0;
  c.boundary.P_x0 = from_mat(Mat::Zero(4, 4));
  const auto dir = scratch("noisefree");
  ASSERT_EQ(run_solve(c, dir.string()).exit_code, exit_code::ok);
  const auto out = run_simulate(c, (dir / "policy.json").string(), dir.string(), 1);
  ASSERT_EQ(out.exit_code, exit_code::ok);
  const auto pf = load_policy((dir / "policy.json").string());
  const auto bs = assemble(pf.steps, c.horizon.sigma, Mat::Zero(4, 4));
  const Vec X = state_mean(bs, to_vec(c.boundary.x0_mean), pf.policy.V);
  const Vec final_mean = to_vec(out.report.simulation->terminal_mean);
  // Euler-Maruyama with 50 substeps on the double integrator: O(h) position error only.
  EXPECT_LT((final_mean - X.tail(4)).cwiseAbs().maxCoeff(), 5e-3);
  EXPECT_EQ(to_mat(out.report.simulation->terminal_cov).norm(), 0.0);
}

TEST(Runner, RepeatedRunsAreByteIdentical) {
  const RunConfig c = small_linear();
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_solve(c, a.string());
  run_solve(c, b.string());
  run_simulate(c, (a / "policy.json").string(), a.string());
  run_simulate(c, (b / "policy.json").string(), b.string());
  for (const char* f : {"iterations.csv", "mc_summary.json", "policy.json", "ellipses.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Runner, InfeasibleConfigExitsWithSolveFailure) {
  RunConfig c = small_linear();
  c.boundary.P_xf = from_mat(1e-8 * Mat::Identity(4, 4));
  c.ics.terminal_policy = "hard";
  c.ics.solver.max_iter = 20000;
  const auto dir = scratch("infeasible");
  const auto out = run_solve(c, dir.string());
  EXPECT_EQ(out.exit_code, exit_code::solve_failure);
  EXPECT_EQ(out.report.solve->status, "failed");
  EXPECT_FALSE(out.report.solve->error.empty());
  EXPECT_EQ(out.report.manifest, (std::vector<std::string>{"iterations.csv", "solve_report.json"}));
  EXPECT_FALSE(fs::exists(dir / "policy.json"));
}

TEST(Runner, PolicyDimensionMismatchNamesBothSources) {
  const RunConfig c = small_linear();
  const auto dir = scratch("mismatch");
  ASSERT_EQ(run_solve(c, dir.string()).exit_code, exit_code::ok);
  RunConfig other = c;
  other.horizon.N = 12;
  try {
    run_simulate(other, (dir / "policy.json").string(), dir.string());
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("policy.json"), std::string::npos);
    EXPECT_NE(msg.find("10"), std::string::npos);
    EXPECT_NE(msg.find("12"), std::string::npos);
    EXPECT_EQ(e.path(), "/horizon/N");
  }
}

TEST(Runner, OutputDirectoryOverride) {
  RunConfig c;
  c.output_dir = "from_config";
  unsetenv("ICS_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir(c), "from_config");
  setenv("ICS_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir(c), "/tmp/elsewhere");
  unsetenv("ICS_OUTPUT_DIR");
}

TEST(Runner, ReportMatchesGoldenFile) {
  const RunConfig c = small_linear();
  const auto dir = scratch("golden");
  run_solve(c, dir.string());
  run_simulate(c, (dir / "policy.json").string(), dir.string());
  const std::string text = emit_report(load_report(dir.string()));
  const fs::path golden = fs::path(ICS_SOURCE_DIR) / "tests/golden/linear_di_report.txt";
  if (std::getenv("ICS_UPDATE_GOLDEN")) {
    std::ofstream(golden, std::ios::binary) << text;
  }
  ASSERT_TRUE(fs::exists(golden)) << "run with ICS_UPDATE_GOLDEN=1 to create " << golden;
  EXPECT_EQ(text, slurp(golden));
}
