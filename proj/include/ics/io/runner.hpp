#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ics/io/report.hpp"

namespace ics::io {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int parse_error = 2;
inline constexpr int solve_failure = 3;
inline constexpr int simulation_failure = 4;
}  // namespace exit_code

struct RunOutcome {
  RunReport report;
  int exit_code = exit_code::ok;
};

/// ICS_OUTPUT_DIR overrides the configured directory.
inline std::string resolve_output_dir(const RunConfig& c) {
  if (const char* env = std::getenv("ICS_OUTPUT_DIR"); env && *env) return env;
  return c.output_dir;
}

namespace detail {

namespace fs = std::filesystem;

class Artifacts {
 public:
  explicit Artifacts(std::string dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void json(const std::string& name, const Json& j) { text(name, j.dump(2) + "\n"); }

  void text(const std::string& name, const std::string& body) {
    std::ofstream out(fs::path(dir_) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(dir_) / name).string());
    out << body;
    written_.push_back(name);
  }

  // The manifest names itself since the report is written last.
  void report(const std::string& name, Json j) {
    written_.push_back(name);
    j["manifest"] = written_;
    std::ofstream out(fs::path(dir_) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(dir_) / name).string());
    out << j.dump(2) << "\n";
  }

  const std::vector<std::string>& written() const { return written_; }

 private:
  std::string dir_;
  std::vector<std::string> written_;
};

inline std::string csv_num(double x) { return num(x, 10); }

inline std::string iterations_csv(const std::vector<IterationRow>& rows) {
  std::string s =
      "iteration,objective,max_control_change,terminal_mean_error,relax_scale,terminal_mode,"
      "status,primal_residual,dual_residual,gap,solver_iterations,trust_region_residual,retried\n";
  for (const auto& r : rows) {
    s += std::to_string(r.index) + "," + csv_num(r.objective) + "," + csv_num(r.max_control_change) +
         "," + csv_num(r.terminal_mean_error) + "," + csv_num(r.relax_scale) + "," +
         r.terminal_mode + "," + r.status + "," + csv_num(r.primal_residual) + "," +
         csv_num(r.dual_residual) + "," + csv_num(r.gap) + "," + std::to_string(r.solver_iterations) +
         "," + csv_num(r.trust_region_residual) + "," + (r.retried ? "1" : "0") + "\n";
  }
  return s;
}

inline std::string reference_csv(const ReferenceTrajectory& ref, const Vec& Xbar, const Policy& p) {
  const int N = ref.N();
  const int nx = static_cast<int>(ref.x_hat.front().size());
  const int nu = static_cast<int>(ref.u_hat.front().size());
  std::string s = "k,tau,t";
  for (int i = 0; i < nx; ++i) s += ",xhat_" + std::to_string(i);
  for (int i = 0; i < nu; ++i) s += ",uhat_" + std::to_string(i);
  for (int i = 0; i < nx; ++i) s += ",xbar_" + std::to_string(i);
  for (int i = 0; i < nu; ++i) s += ",v_" + std::to_string(i);
  s += "\n";
  for (int k = 0; k <= N; ++k) {
    s += std::to_string(k) + "," + csv_num(ref.tau(k)) + "," + csv_num(ref.time(ref.tau(k)));
    for (int i = 0; i < nx; ++i) s += "," + csv_num(ref.x_hat[k](i));
    for (int i = 0; i < nu; ++i) s += k < N ? "," + csv_num(ref.u_hat[k](i)) : ",";
    for (int i = 0; i < nx; ++i) s += "," + csv_num(Xbar(k * nx + i));
    for (int i = 0; i < nu; ++i) s += k < N ? "," + csv_num(p.v(k)(i)) : ",";
    s += "\n";
  }
  return s;
}

inline SolveSummary summarize(const std::vector<IterationRecord>& history, bool converged,
                              const std::string& error) {
  SolveSummary s;
  for (const auto& r : history) s.table.push_back(to_row(r));
  s.iterations = static_cast<int>(history.size());
  s.converged = converged;
  s.error = error;
  s.status = !error.empty() ? "failed" : converged ? "converged" : "max_iterations";
  if (!history.empty()) {
    s.objective = history.back().objective;
    s.terminal_mean_error = history.back().terminal_mean_error;
  }
  return s;
}

/// Joint violation rates of every configured constraint group at every step it covers.
inline std::vector<ViolationRow> violation_table(const RunConfig& c, const SimulationResult& sim) {
  std::vector<ViolationRow> rows;
  const int N = c.horizon.N;
  auto rate = [](const Mat& S, const std::vector<HalfSpaceConfig>& hs) {
    Eigen::Array<bool, Eigen::Dynamic, 1> bad =
        Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(S.cols(), false);
    for (const auto& h : hs) bad = bad || ((to_vec(h.normal).transpose() * S).transpose().array() > h.offset);
    return static_cast<double>(bad.count()) / static_cast<double>(S.cols());
  };
  for (std::size_t g = 0; g < c.constraints.state.size(); ++g) {
    const auto& grp = c.constraints.state[g];
    const int a = grp.first_step < 0 ? 1 : grp.first_step;
    const int b = grp.last_step < 0 ? N : grp.last_step;
    for (int k = a; k <= b; ++k)
      rows.push_back({"state", static_cast<int>(g), k, rate(sim.state_samples[k], grp.halfspaces), grp.risk});
  }
  for (std::size_t g = 0; g < c.constraints.control.size(); ++g) {
    const auto& grp = c.constraints.control[g];
    const int a = grp.first_step < 0 ? 0 : grp.first_step;
    const int b = grp.last_step < 0 ? N - 1 : grp.last_step;
    for (int k = a; k <= b; ++k)
      rows.push_back({"control", static_cast<int>(g), k, rate(sim.control_samples[k], grp.halfspaces), grp.risk});
  }
  return rows;
}

inline std::string ellipses_csv(const RunConfig& c, const SimulationResult& sim, const Vec& Xbar,
                                const Mat& Px) {
  const int nx = c.n_x();
  const int i0 = c.simulation.ellipse_axes[0], i1 = c.simulation.ellipse_axes[1];
  const double level = c.simulation.ellipse_level;
  std::string s = "k,source,center_0,center_1,semi_major,semi_minor,angle\n";
  auto row = [&](int k, const char* src, const Eigen::Vector2d& m, const Eigen::Matrix2d& P) {
    const auto e = confidence_ellipse(m, P, level);
    s += std::to_string(k) + "," + src + "," + csv_num(e.center(0)) + "," + csv_num(e.center(1)) +
         "," + csv_num(e.semi_axes(0)) + "," + csv_num(e.semi_axes(1)) + "," + csv_num(e.angle) + "\n";
  };
  for (int k = 0; k <= c.horizon.N; ++k) {
    const Eigen::Vector2d mm(sim.mean[k](i0), sim.mean[k](i1));
    Eigen::Matrix2d Pm;
    Pm << sim.cov[k](i0, i0), sim.cov[k](i0, i1), sim.cov[k](i1, i0), sim.cov[k](i1, i1);
    row(k, "mc", mm, Pm);
    const Eigen::Vector2d ml(Xbar(k * nx + i0), Xbar(k * nx + i1));
    const Mat& B = Px.block(k * nx, k * nx, nx, nx);
    Eigen::Matrix2d Pl;
    Pl << B(i0, i0), B(i0, i1), B(i1, i0), B(i1, i1);
    row(k, "linear", ml, 0.5 * (Pl + Pl.transpose()));
  }
  return s;
}

inline std::string paths_csv(const SimulationResult& sim, int nx, int N, int substeps) {
  std::string s = "trial,substep,tau";
  for (int i = 0; i < nx; ++i) s += ",x_" + std::to_string(i);
  s += "\n";
  const double h = 1.0 / (N * substeps);
  for (std::size_t t = 0; t < sim.paths.size(); ++t) {
    for (std::size_t j = 0; j < sim.paths[t].size(); ++j) {
      s += std::to_string(t) + "," + std::to_string(j) + "," + csv_num(static_cast<double>(j) * h);
      for (int i = 0; i < nx; ++i) s += "," + csv_num(sim.paths[t][j](i));
      s += "\n";
    }
  }
  return s;
}

}  // namespace detail

/// Runs the iCS loop and writes policy.json, iterations.csv, reference_trajectory.csv and
/// solve_report.json. On failure the iteration table and the report are still written.
inline RunOutcome run_solve(const RunConfig& c, const std::string& out_dir) {
  detail::Artifacts art(out_dir);
  RunOutcome out;
  const ModelSpec model = make_model(c);
  const CSProblemSpec spec = make_problem(c);
  const IcsSettings settings = make_settings(c);
  try {
    const IcsResult r = ics_solve(model, spec, make_initial_guess(c), settings);
    const SolveSummary sum = detail::summarize(r.history, r.converged, "");
    art.json("policy.json", policy_to_json(r.policy, r.steps, c.horizon.sigma, r.converged));
    art.text("iterations.csv", detail::iterations_csv(sum.table));
    const BlockSystem bs = assemble(r.steps, c.horizon.sigma, spec.P_x0);
    art.text("reference_trajectory.csv",
             detail::reference_csv(r.reference, state_mean(bs, spec.x0_mean, r.policy.V), r.policy));
    out.report.solve = sum;
  } catch (const IcsError& e) {
    out.report.solve = detail::summarize(e.history(), false, e.what());
    art.text("iterations.csv", detail::iterations_csv(out.report.solve->table));
    out.exit_code = exit_code::solve_failure;
  } catch (const NumericalFailure& e) {
    out.report.solve = detail::summarize({}, false, e.what());
    out.exit_code = exit_code::solve_failure;
  }
  art.report("solve_report.json", {{"command", "solve"}, {"solve", to_json(*out.report.solve)}});
  out.report.manifest = art.written();
  return out;
}

/// Closed-loop Monte Carlo of a stored policy. Writes mc_summary.json, ellipses.csv, optional
/// paths.csv and simulate_report.json.
inline RunOutcome run_simulate(const RunConfig& c, const std::string& policy_path,
                               const std::string& out_dir, std::optional<int> trials = std::nullopt,
                               std::optional<std::uint64_t> seed = std::nullopt) {
  const PolicyFile pf = load_policy(policy_path);
  auto mismatch = [&](const std::string& ptr, const std::string& what, int pol, int cfg) {
    if (pol != cfg) {
      throw ConfigError(ptr, "policy file " + policy_path + " has " + what + " = " +
                                 std::to_string(pol) + " but the config has " + std::to_string(cfg));
    }
  };
  mismatch("/horizon/N", "N", pf.policy.N(), c.horizon.N);
  mismatch("/model", "n_x", pf.policy.n_x(), c.n_x());
  mismatch("/model", "n_u", pf.policy.n_u(), c.n_u());
  if (pf.sigma != c.horizon.sigma) {
    throw ConfigError("/horizon/sigma", "policy file " + policy_path + " was designed for sigma = " +
                                            num(pf.sigma, 17) + " but the config has " +
                                            num(c.horizon.sigma, 17));
  }

  SimOptions o = make_sim_options(c);
  if (trials) o.trials = *trials;
  if (seed) o.seed = *seed;
  detail::Artifacts art(out_dir);
  RunOutcome out;
  SimulationSummary s;
  s.trials = o.trials;
  s.seed = o.seed;
  s.substeps = o.substeps;
  const CSProblemSpec spec = make_problem(c);
  try {
    const SimulationResult sim = simulate_closed_loop(make_model(c), pf.policy, pf.steps,
                                                      spec.x0_mean, spec.P_x0, c.horizon.sigma, o);
    s.status = "ok";
    s.valid = sim.valid();
    s.divergent = sim.divergent;
    s.terminal_mean = from_vec(sim.terminal_mean);
    s.terminal_cov = from_mat(sim.terminal_cov);
    Eigen::SelfAdjointEigenSolver<Mat> es(sim.terminal_cov - spec.P_xf, Eigen::EigenvaluesOnly);
    s.cov_excess = es.eigenvalues().maxCoeff();
    s.violations = detail::violation_table(c, sim);
    for (const auto& v : s.violations)
      if (!s.worst || v.rate > s.worst->rate) s.worst = v;

    Json summary = to_json(s);
    summary.erase("status");
    summary.erase("error");
    Json means = Json::array();
    for (const auto& m : sim.mean) means.push_back(from_vec(m));
    summary["step_mean"] = means;
    summary["P_xf"] = c.boundary.P_xf;
    art.json("mc_summary.json", summary);

    const BlockSystem bs = assemble(pf.steps, c.horizon.sigma, spec.P_x0);
    art.text("ellipses.csv", detail::ellipses_csv(c, sim, state_mean(bs, spec.x0_mean, pf.policy.V),
                                                  state_covariance(bs, pf.policy.K())));
    if (o.record_full_paths) {
      art.text("paths.csv", detail::paths_csv(sim, c.n_x(), c.horizon.N, o.substeps));
    }
  } catch (const SimulationError& e) {
    s.status = "failed";
    s.error = e.what();
    out.exit_code = exit_code::simulation_failure;
  }
  out.report.simulation = s;
  art.report("simulate_report.json",
             {{"command", "simulate"}, {"policy", policy_path}, {"simulation", to_json(s)}});
  out.report.manifest = art.written();
  return out;
}

/// Merges solve_report.json and simulate_report.json found in a run directory.
inline RunReport load_report(const std::string& dir) {
  namespace fs = std::filesystem;
  RunReport r;
  const fs::path solve = fs::path(dir) / "solve_report.json";
  const fs::path sim = fs::path(dir) / "simulate_report.json";
  if (!fs::exists(solve) && !fs::exists(sim)) {
    throw InvalidArgument(dir + ": no solve_report.json or simulate_report.json");
  }
  try {
    if (fs::exists(solve)) {
      const Json j = read_json_file(solve.string());
      r.solve = solve_summary_from_json(j.at("solve"));
      for (const auto& f : j.at("manifest")) r.manifest.push_back(f.get<std::string>());
    }
    if (fs::exists(sim)) {
      const Json j = read_json_file(sim.string());
      r.simulation = simulation_summary_from_json(j.at("simulation"));
      for (const auto& f : j.at("manifest")) r.manifest.push_back(f.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(dir + ": malformed report: " + e.what());
  }
  return r;
}

}  // namespace ics::io
