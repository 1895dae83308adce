#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ics/io/config.hpp"

namespace ics::io {

struct IterationRow {
  int index = 0;
  double objective = 0.0;
  double max_control_change = 0.0;
  double terminal_mean_error = 0.0;
  double relax_scale = 1.0;
  std::string terminal_mode;
  std::string status;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  int solver_iterations = 0;
  double trust_region_residual = 0.0;
  bool retried = false;
};

struct SolveSummary {
  std::string status;  // converged, max_iterations, failed
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double terminal_mean_error = 0.0;
  std::string error;
  std::vector<IterationRow> table;
};

/// Joint violation of one constraint group at one step.
struct ViolationRow {
  std::string kind;  // state or control
  int group = 0;
  int step = 0;
  double rate = 0.0;
  double budget = 0.0;
};

struct SimulationSummary {
  std::string status;  // ok, failed
  std::string error;
  int trials = 0;
  int valid = 0;
  int divergent = 0;
  std::uint64_t seed = 0;
  int substeps = 0;
  Vector terminal_mean;
  Matrix terminal_cov;
  double cov_excess = 0.0;  // largest eigenvalue of terminal_cov - P_xf
  std::vector<ViolationRow> violations;
  std::optional<ViolationRow> worst;
};

struct RunReport {
  std::optional<SolveSummary> solve;
  std::optional<SimulationSummary> simulation;
  std::vector<std::string> manifest;
};

inline IterationRow to_row(const IterationRecord& r) {
  IterationRow row;
  row.index = r.index;
  row.objective = r.objective;
  row.max_control_change = r.max_control_change;
  row.terminal_mean_error = r.terminal_mean_error;
  row.relax_scale = r.relax_scale;
  row.terminal_mode = to_string(r.terminal_mode);
  row.status = conic::to_string(r.status);
  row.primal_residual = r.residuals.primal;
  row.dual_residual = r.residuals.dual;
  row.gap = r.residuals.gap;
  row.solver_iterations = r.solver_iterations;
  row.trust_region_residual = r.trust_region_residual;
  row.retried = r.retried;
  return row;
}

// ---------------------------------------------------------------------------------------------
// JSON.

inline Json to_json(const IterationRow& r) {
  return {{"iteration", r.index},
          {"objective", r.objective},
          {"max_control_change", r.max_control_change},
          {"terminal_mean_error", r.terminal_mean_error},
          {"relax_scale", r.relax_scale},
          {"terminal_mode", r.terminal_mode},
          {"status", r.status},
          {"primal_residual", r.primal_residual},
          {"dual_residual", r.dual_residual},
          {"gap", r.gap},
          {"solver_iterations", r.solver_iterations},
          {"trust_region_residual", r.trust_region_residual},
          {"retried", r.retried}};
}

inline Json to_json(const SolveSummary& s) {
  Json table = Json::array();
  for (const auto& r : s.table) table.push_back(to_json(r));
  return {{"status", s.status},
          {"converged", s.converged},
          {"iterations", s.iterations},
          {"objective", s.objective},
          {"terminal_mean_error", s.terminal_mean_error},
          {"error", s.error},
          {"table", table}};
}

inline Json to_json(const ViolationRow& v) {
  return {{"kind", v.kind}, {"group", v.group}, {"step", v.step}, {"rate", v.rate}, {"budget", v.budget}};
}

inline Json to_json(const SimulationSummary& s) {
  Json rows = Json::array();
  for (const auto& v : s.violations) rows.push_back(to_json(v));
  return {{"status", s.status},
          {"error", s.error},
          {"trials", s.trials},
          {"valid", s.valid},
          {"divergent", s.divergent},
          {"seed", s.seed},
          {"substeps", s.substeps},
          {"terminal_mean", s.terminal_mean},
          {"terminal_cov", s.terminal_cov},
          {"cov_excess", s.cov_excess},
          {"violations", rows},
          {"worst_violation", s.worst ? to_json(*s.worst) : Json(nullptr)}};
}

inline IterationRow iteration_row_from_json(const Json& j) {
  IterationRow r;
  r.index = j.at("iteration").get<int>();
  r.objective = j.at("objective").get<double>();
  r.max_control_change = j.at("max_control_change").get<double>();
  r.terminal_mean_error = j.at("terminal_mean_error").get<double>();
  r.relax_scale = j.at("relax_scale").get<double>();
  r.terminal_mode = j.at("terminal_mode").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.primal_residual = j.at("primal_residual").get<double>();
  r.dual_residual = j.at("dual_residual").get<double>();
  r.gap = j.at("gap").get<double>();
  r.solver_iterations = j.at("solver_iterations").get<int>();
  r.trust_region_residual = j.at("trust_region_residual").get<double>();
  r.retried = j.at("retried").get<bool>();
  return r;
}

inline SolveSummary solve_summary_from_json(const Json& j) {
  SolveSummary s;
  s.status = j.at("status").get<std::string>();
  s.converged = j.at("converged").get<bool>();
  s.iterations = j.at("iterations").get<int>();
  s.objective = j.at("objective").get<double>();
  s.terminal_mean_error = j.at("terminal_mean_error").get<double>();
  s.error = j.at("error").get<std::string>();
  for (const auto& r : j.at("table")) s.table.push_back(iteration_row_from_json(r));
  return s;
}

inline ViolationRow violation_from_json(const Json& j) {
  return {j.at("kind").get<std::string>(), j.at("group").get<int>(), j.at("step").get<int>(),
          j.at("rate").get<double>(), j.at("budget").get<double>()};
}

inline SimulationSummary simulation_summary_from_json(const Json& j) {
  SimulationSummary s;
  s.status = j.at("status").get<std::string>();
  s.error = j.at("error").get<std::string>();
  s.trials = j.at("trials").get<int>();
  s.valid = j.at("valid").get<int>();
  s.divergent = j.at("divergent").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.substeps = j.at("substeps").get<int>();
  s.terminal_mean = j.at("terminal_mean").get<Vector>();
  s.terminal_cov = j.at("terminal_cov").get<Matrix>();
  s.cov_excess = j.at("cov_excess").get<double>();
  for (const auto& v : j.at("violations")) s.violations.push_back(violation_from_json(v));
  if (!j.at("worst_violation").is_null()) s.worst = violation_from_json(j.at("worst_violation"));
  return s;
}

// ---------------------------------------------------------------------------------------------
// Text.

/// printf-style %.<digits>g.
inline std::string num(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

inline std::string join(const Vector& v, int digits = 6) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + num(v[i], digits);
  return out;
}

/// Human-readable summary. Column order is fixed; numbers carry 6 significant digits.
inline std::string emit_report(const RunReport& r) {
  std::ostringstream os;
  os << "ics run report\n";
  if (r.solve) {
    const auto& s = *r.solve;
    os << "\nsolve\n";
    os << "  status               " << s.status << "\n";
    os << "  iterations           " << s.iterations << "\n";
    if (!s.table.empty()) {
      os << "  final objective      " << num(s.objective) << "\n";
      os << "  terminal mean error  " << num(s.terminal_mean_error) << "\n";
    }
    if (!s.error.empty()) os << "  error                " << s.error << "\n";
    if (!s.table.empty()) {
      char line[256];
      std::snprintf(line, sizeof line, "  %4s  %12s  %12s  %12s  %8s  %4s  %-9s  %12s  %7s\n",
                    "iter", "objective", "du_max", "term_err", "relax", "mode", "status",
                    "primal_res", "admm");
      os << line;
      for (const auto& t : s.table) {
        std::snprintf(line, sizeof line, "  %4d  %12s  %12s  %12s  %8s  %4s  %-9s  %12s  %7d%s\n",
                      t.index, num(t.objective).c_str(), num(t.max_control_change).c_str(),
                      num(t.terminal_mean_error).c_str(), num(t.relax_scale).c_str(),
                      t.terminal_mode.c_str(), t.status.c_str(), num(t.primal_residual).c_str(),
                      t.solver_iterations, t.retried ? "  (retried)" : "");
        os << line;
      }
    }
  }
  if (r.simulation) {
    const auto& s = *r.simulation;
    os << "\nsimulation\n";
    os << "  status               " << s.status << "\n";
    if (!s.error.empty()) os << "  error                " << s.error << "\n";
    if (s.status == "ok") {
      os << "  trials               " << s.trials << " (valid " << s.valid << ", divergent "
         << s.divergent << ")\n";
      os << "  seed                 " << s.seed << "\n";
      os << "  substeps             " << s.substeps << "\n";
      os << "  terminal mean        " << join(s.terminal_mean) << "\n";
      os << "  terminal cov         ";
      for (std::size_t i = 0; i < s.terminal_cov.size(); ++i) {
        os << (i ? "                       " : "") << join(s.terminal_cov[i]) << "\n";
      }
      os << "  cov excess (max eig) " << num(s.cov_excess) << "\n";
      if (s.worst) {
        os << "  max violation        " << num(s.worst->rate) << " at step " << s.worst->step
           << " (" << s.worst->kind << " group " << s.worst->group << ", budget "
           << num(s.worst->budget) << ")\n";
      } else {
        os << "  max violation        none (no chance constraints)\n";
      }
    }
  }
  if (!r.manifest.empty()) {
    os << "\nfiles\n";
    for (const auto& f : r.manifest) os << "  " << f << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Policy files.

/// A policy together with the discrete linearization it was designed on. The controller needs
/// A_k for its y recursion; the other terms allow the linear covariance analysis.
struct PolicyFile {
  Policy policy;
  std::vector<LinearizedStep> steps;
  double sigma = 0.0;
  bool converged = false;
};

inline Json policy_to_json(const Policy& p, const std::vector<LinearizedStep>& steps, double sigma,
                           bool converged) {
  Json j;
  j["N"] = p.N();
  j["n_x"] = p.n_x();
  j["n_u"] = p.n_u();
  j["sigma"] = sigma;
  j["converged"] = converged;
  Json arr = Json::array();
  for (int k = 0; k < p.N(); ++k) {
    const auto& s = steps[k];
    arr.push_back({{"k", k},
                   {"v", from_vec(p.v(k))},
                   {"K", from_mat(p.K_blocks[k])},
                   {"A", from_mat(s.A)},
                   {"B", from_mat(s.B)},
                   {"r", from_vec(s.r)},
                   {"G", from_mat(s.G)}});
  }
  j["steps"] = arr;
  return j;
}

inline PolicyFile policy_from_json(const Json& j) {
  PolicyFile f;
  try {
    const int N = j.at("N").get<int>();
    const int nx = j.at("n_x").get<int>();
    const int nu = j.at("n_u").get<int>();
    f.sigma = j.at("sigma").get<double>();
    f.converged = j.at("converged").get<bool>();
    const auto& arr = j.at("steps");
    if (static_cast<int>(arr.size()) != N) throw InvalidArgument("policy: steps must hold N entries");
    f.policy.V.resize(N * nu);
    for (int k = 0; k < N; ++k) {
      const auto& e = arr[k];
      const Vec v = to_vec(e.at("v").get<Vector>());
      ics::detail::require_size(v, nu, "policy: v[" + std::to_string(k) + "]");
      f.policy.V.segment(k * nu, nu) = v;
      const Mat K = to_mat(e.at("K").get<Matrix>());
      ics::detail::require_shape(K, nu, nx, "policy: K[" + std::to_string(k) + "]");
      f.policy.K_blocks.push_back(K);
      LinearizedStep s;
      s.A = to_mat(e.at("A").get<Matrix>());
      s.B = to_mat(e.at("B").get<Matrix>());
      s.r = to_vec(e.at("r").get<Vector>());
      s.G = to_mat(e.at("G").get<Matrix>());
      ics::detail::require_shape(s.A, nx, nx, "policy: A[" + std::to_string(k) + "]");
      ics::detail::require_shape(s.B, nx, nu, "policy: B[" + std::to_string(k) + "]");
      ics::detail::require_size(s.r, nx, "policy: r[" + std::to_string(k) + "]");
      ics::detail::require_shape(s.G, nx, nx, "policy: G[" + std::to_string(k) + "]");
      s.Sigma = f.sigma * s.G * s.G.transpose();
      f.steps.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("policy: ") + e.what());
  }
  return f;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

inline PolicyFile load_policy(const std::string& path) {
  try {
    return policy_from_json(read_json_file(path));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

}  // namespace ics::io
