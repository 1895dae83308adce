#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ics/ics.hpp"

namespace ics::io {

using Json = nlohmann::ordered_json;
using Vector = std::vector<double>;
using Matrix = std::vector<std::vector<double>>;

/// Invalid configuration. `path` is a JSON pointer to the offending value.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string path, const std::string& what)
      : InvalidArgument((path.empty() ? std::string("/") : path) + ": " + what),
        path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct ModelConfig {
  std::string kind = "drag_double_integrator";  // or "linear"
  double c_d = 0.0;
  double gamma = 0.0;
  Matrix A, B, G;  // linear only
  bool operator==(const ModelConfig&) const = default;
};

struct HorizonConfig {
  int N = 0;
  double sigma = 0.0;
  bool operator==(const HorizonConfig&) const = default;
};

struct BoundaryConfig {
  Vector x0_mean;
  Matrix P_x0;
  Vector xf_mean;
  Matrix P_xf;
  bool operator==(const BoundaryConfig&) const = default;
};

/// l(x, u) = u^T Ru u + (x - x_ref)^T Rx (x - x_ref) + q_u^T u + q_x^T x; empty members are absent.
struct MeanCostConfig {
  Matrix Ru, Rx;
  Vector x_ref, q_u, q_x;
  bool operator==(const MeanCostConfig&) const = default;
};

struct CostConfig {
  MeanCostConfig mean;
  Matrix Qx, Qu;
  double w_xf = 1000.0;
  bool operator==(const CostConfig&) const = default;
};

struct HalfSpaceConfig {
  Vector normal;
  double offset = 0.0;
  bool operator==(const HalfSpaceConfig&) const = default;
};

/// Half-spaces sharing one risk budget per step, split uniformly. Steps are inclusive; -1 means
/// the default range (state 1..N, control 0..N-1).
struct ConstraintGroup {
  std::vector<HalfSpaceConfig> halfspaces;
  double risk = 0.05;
  int first_step = -1;
  int last_step = -1;
  bool operator==(const ConstraintGroup&) const = default;
};

struct ConstraintsConfig {
  std::vector<ConstraintGroup> state, control;
  bool operator==(const ConstraintsConfig&) const = default;
};

struct SolverConfig {
  double eps_primal = 1e-6;
  double eps_dual = 1e-6;
  double eps_gap = 1e-6;
  int max_iter = 100000;
  double rho = 0.1;
  double over_relaxation = 1.6;
  bool adaptive_rho = true;
  bool operator==(const SolverConfig&) const = default;
};

struct IcsConfig {
  int max_iterations = 15;
  double tol = 1e-3;
  double delta_x = 5.0;
  double delta_u = 0.5;
  double p_tr_x = 0.1;
  double p_tr_u = 0.1;
  int n_relax = 5;
  double relax_rho = 0.5;
  std::string mean_propagation = "deterministic";
  int mc_trials = 500;
  std::uint64_t mc_seed = 1;
  int mc_substeps = 200;
  std::string discretization = "exact";
  int substeps = 10;
  std::string terminal_policy = "soft";
  bool warm_start = true;
  Matrix initial_guess;  // one row (held for every step) or N rows; empty means zero
  SolverConfig solver;
  bool operator==(const IcsConfig&) const = default;
};

struct SimulationConfig {
  int trials = 5000;
  int substeps = 200;
  std::uint64_t seed = 1;
  bool record_full_paths = false;
  int max_recorded_paths = 50;
  int threads = 0;
  double ellipse_level = 0.9;
  std::vector<int> ellipse_axes = {0, 1};
  bool operator==(const SimulationConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  HorizonConfig horizon;
  BoundaryConfig boundary;
  CostConfig cost;
  ConstraintsConfig constraints;
  IcsConfig ics;
  SimulationConfig simulation;
  std::string output_dir = "runs";
  bool operator==(const RunConfig&) const = default;

  int n_x() const { return model.kind == "linear" ? static_cast<int>(model.A.size()) : 4; }
  int n_u() const {
    return model.kind == "linear" ? (model.B.empty() ? 0 : static_cast<int>(model.B[0].size())) : 2;
  }
};

// ---------------------------------------------------------------------------------------------
// Conversions.

inline Vec to_vec(const Vector& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

inline Mat to_mat(const Matrix& m) {
  const auto r = static_cast<Eigen::Index>(m.size());
  const auto c = r ? static_cast<Eigen::Index>(m[0].size()) : 0;
  Mat out(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) out(i, j) = m[i][j];
  return out;
}

inline Vector from_vec(const Vec& v) { return Vector(v.data(), v.data() + v.size()); }

inline Matrix from_mat(const Mat& m) {
  Matrix out(m.rows(), Vector(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline ModelSpec make_model(const RunConfig& c) {
  if (c.model.kind == "linear") return make_linear_model(to_mat(c.model.A), to_mat(c.model.B), to_mat(c.model.G));
  return make_drag_double_integrator({c.model.c_d, c.model.gamma});
}

inline CSProblemSpec make_problem(const RunConfig& c) {
  const int N = c.horizon.N, nx = c.n_x(), nu = c.n_u();
  CSProblemSpec s;
  s.x0_mean = to_vec(c.boundary.x0_mean);
  s.P_x0 = to_mat(c.boundary.P_x0);
  s.xf_mean = to_vec(c.boundary.xf_mean);
  s.P_xf = to_mat(c.boundary.P_xf);
  s.weights = assemble_cost_weights(std::vector<Mat>(N, to_mat(c.cost.Qx)),
                                    std::vector<Mat>(N, to_mat(c.cost.Qu)), c.horizon.sigma, N);
  s.w_xf = c.cost.w_xf;
  const auto& m = c.cost.mean;
  if (!m.Ru.empty()) s.mean_cost.S_u = psd_sqrt(to_mat(m.Ru));
  if (!m.Rx.empty()) {
    s.mean_cost.S_x = psd_sqrt(to_mat(m.Rx));
    s.mean_cost.x_ref = m.x_ref.empty() ? Vec::Zero(nx) : to_vec(m.x_ref);
  }
  if (!m.q_u.empty()) s.mean_cost.q_u = to_vec(m.q_u);
  if (!m.q_x.empty()) s.mean_cost.q_x = to_vec(m.q_x);
  s.state_constraints.assign(N + 1, {});
  s.control_constraints.assign(N, {});
  auto expand = [&](const std::vector<ConstraintGroup>& groups, auto& lists, int lo, int hi) {
    for (const auto& g : groups) {
      const auto risks = allocate_risk(g.risk, static_cast<int>(g.halfspaces.size()));
      const int a = g.first_step < 0 ? lo : g.first_step;
      const int b = g.last_step < 0 ? hi : g.last_step;
      for (int k = a; k <= b; ++k)
        for (std::size_t i = 0; i < g.halfspaces.size(); ++i)
          lists[k].push_back({to_vec(g.halfspaces[i].normal), g.halfspaces[i].offset, risks[i]});
    }
  };
  expand(c.constraints.state, s.state_constraints, 1, N);
  expand(c.constraints.control, s.control_constraints, 0, N - 1);
  s.trust_region = {c.ics.delta_x, c.ics.delta_u, c.ics.p_tr_x, c.ics.p_tr_u};
  s.relaxation = {c.ics.n_relax, c.ics.relax_rho};
  (void)nu;
  return s;
}

inline IcsSettings make_settings(const RunConfig& c) {
  IcsSettings s;
  const auto& i = c.ics;
  s.max_iterations = i.max_iterations;
  s.tol = i.tol;
  s.trust_region = {i.delta_x, i.delta_u, i.p_tr_x, i.p_tr_u};
  s.relaxation = {i.n_relax, i.relax_rho};
  s.mean_propagation = i.mean_propagation == "monte_carlo" ? MeanPropagation::monte_carlo
                                                          : MeanPropagation::deterministic;
  s.mc_trials = i.mc_trials;
  s.mc_seed = i.mc_seed;
  s.mc_substeps = i.mc_substeps;
  s.discretization = i.discretization == "first_order" ? DiscretizationScheme::first_order
                                                       : DiscretizationScheme::exact;
  s.substeps = i.substeps;
  s.terminal_policy = i.terminal_policy == "hard"          ? TerminalPolicy::hard
                      : i.terminal_policy == "auto_switch" ? TerminalPolicy::auto_switch
                                                           : TerminalPolicy::soft;
  s.warm_start = i.warm_start;
  s.solver.eps_primal = i.solver.eps_primal;
  s.solver.eps_dual = i.solver.eps_dual;
  s.solver.eps_gap = i.solver.eps_gap;
  s.solver.max_iter = i.solver.max_iter;
  s.solver.rho = i.solver.rho;
  s.solver.over_relaxation = i.solver.over_relaxation;
  s.solver.adaptive_rho = i.solver.adaptive_rho;
  return s;
}

inline std::vector<Vec> make_initial_guess(const RunConfig& c) {
  const int N = c.horizon.N;
  const auto& g = c.ics.initial_guess;
  if (g.empty()) return std::vector<Vec>(N, Vec::Zero(c.n_u()));
  if (g.size() == 1) return std::vector<Vec>(N, to_vec(g[0]));
  std::vector<Vec> out;
  for (const auto& row : g) out.push_back(to_vec(row));
  return out;
}

inline SimOptions make_sim_options(const RunConfig& c) {
  SimOptions o;
  o.trials = c.simulation.trials;
  o.substeps = c.simulation.substeps;
  o.seed = c.simulation.seed;
  o.record_full_paths = c.simulation.record_full_paths;
  o.max_recorded_paths = c.simulation.max_recorded_paths;
  o.threads = c.simulation.threads;
  return o;
}

// ---------------------------------------------------------------------------------------------
// Parsing.

namespace detail {

class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  // Rejects keys outside `allowed`.
  void keys(std::initializer_list<const char*> allowed) const {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j_.items()) {
      if (!ok.count(k)) throw ConfigError(path_ + "/" + k, "unknown key");
    }
  }

  bool has(const char* k) const { return j_.contains(k); }
  std::string at(const char* k) const { return path_ + "/" + k; }
  const Json& raw(const char* k) const {
    if (!has(k)) throw ConfigError(at(k), "missing required key");
    return j_.at(k);
  }
  Reader object(const char* k) const { return Reader(raw(k), at(k)); }

  double number(const char* k) const { return as_number(raw(k), at(k)); }
  double number(const char* k, double def) const { return has(k) ? number(k) : def; }
  int integer(const char* k) const { return as_int(raw(k), at(k)); }
  int integer(const char* k, int def) const { return has(k) ? integer(k) : def; }
  std::uint64_t u64(const char* k, std::uint64_t def) const {
    if (!has(k)) return def;
    const Json& v = raw(k);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw ConfigError(at(k), "expected a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }
  bool boolean(const char* k, bool def) const {
    if (!has(k)) return def;
    if (!raw(k).is_boolean()) throw ConfigError(at(k), "expected a boolean");
    return raw(k).get<bool>();
  }
  std::string string(const char* k, const std::string& def) const {
    if (!has(k)) return def;
    if (!raw(k).is_string()) throw ConfigError(at(k), "expected a string");
    return raw(k).get<std::string>();
  }
  Vector vector(const char* k) const { return as_vector(raw(k), at(k)); }
  Matrix matrix(const char* k) const { return as_matrix(raw(k), at(k)); }

  static double as_number(const Json& v, const std::string& p) {
    if (!v.is_number()) throw ConfigError(p, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(p, "must be finite");
    return x;
  }
  static int as_int(const Json& v, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigError(p, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(p, "integer out of range");
    return static_cast<int>(x);
  }
  static Vector as_vector(const Json& v, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p, "expected an array of numbers");
    Vector out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], p + "/" + std::to_string(i)));
    return out;
  }
  static Matrix as_matrix(const Json& v, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p, "expected an array of rows");
    Matrix out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(as_vector(v[i], p + "/" + std::to_string(i)));
      if (out.back().size() != out.front().size()) {
        throw ConfigError(p + "/" + std::to_string(i), "row length differs from row 0");
      }
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_, what); }

 private:
  const Json& j_;
  std::string path_;
};

inline void check_shape(const Matrix& m, int r, int c, const std::string& p) {
  const int rows = static_cast<int>(m.size());
  const int cols = rows ? static_cast<int>(m[0].size()) : 0;
  if (rows != r || (r > 0 && cols != c)) {
    throw ConfigError(p, "expected " + std::to_string(r) + "x" + std::to_string(c) + ", got " +
                             std::to_string(rows) + "x" + std::to_string(cols));
  }
}

inline void check_len(const Vector& v, int n, const std::string& p) {
  if (static_cast<int>(v.size()) != n) {
    throw ConfigError(p, "expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
  }
}

inline void check_psd(const Matrix& m, const std::string& p, bool definite) {
  const Mat M = to_mat(m);
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff())) {
    throw ConfigError(p, "must be symmetric");
  }
  const double lo = ics::detail::min_eigenvalue(M);
  if (definite ? lo <= 0.0 : lo < -1e-12 * (1.0 + M.cwiseAbs().maxCoeff())) {
    throw ConfigError(p, definite ? "must be positive definite" : "must be positive semidefinite");
  }
}

inline void check_range(bool ok, const std::string& p, const std::string& what) {
  if (!ok) throw ConfigError(p, what);
}

}  // namespace detail

inline RunConfig from_json(const Json& root) {
  using detail::check_len;
  using detail::check_range;
  using detail::check_shape;
  detail::Reader r(root, "");
  r.keys({"model", "horizon", "boundary", "cost", "constraints", "ics", "simulation", "output_dir"});
  RunConfig c;

  {
    auto m = r.object("model");
    c.model.kind = m.string("kind", "");
    if (c.model.kind == "drag_double_integrator") {
      m.keys({"kind", "c_d", "gamma"});
      c.model.c_d = m.number("c_d");
      c.model.gamma = m.number("gamma");
      check_range(c.model.c_d >= 0.0, m.at("c_d"), "must be >= 0");
      check_range(c.model.gamma >= 0.0, m.at("gamma"), "must be >= 0");
    } else if (c.model.kind == "linear") {
      m.keys({"kind", "A", "B", "G"});
      c.model.A = m.matrix("A");
      const int nx = static_cast<int>(c.model.A.size());
      check_range(nx >= 1, m.at("A"), "must be non-empty");
      check_shape(c.model.A, nx, nx, m.at("A"));
      c.model.B = m.matrix("B");
      check_range(!c.model.B.empty() && static_cast<int>(c.model.B.size()) == nx &&
                      !c.model.B[0].empty(),
                  m.at("B"), "must have n_x rows and at least one column");
      c.model.G = m.matrix("G");
      check_range(static_cast<int>(c.model.G.size()) == nx && !c.model.G[0].empty(), m.at("G"),
                  "must have n_x rows and at least one column");
    } else {
      throw ConfigError(m.at("kind"), "expected \"drag_double_integrator\" or \"linear\"");
    }
  }
  const int nx = c.n_x(), nu = c.n_u();

  {
    auto h = r.object("horizon");
    h.keys({"N", "sigma"});
    c.horizon.N = h.integer("N");
    c.horizon.sigma = h.number("sigma");
    check_range(c.horizon.N >= 1, h.at("N"), "must be >= 1");
    check_range(c.horizon.sigma > 0.0, h.at("sigma"), "must be > 0");
  }
  const int N = c.horizon.N;

  {
    auto b = r.object("boundary");
    b.keys({"x0_mean", "P_x0", "xf_mean", "P_xf"});
    c.boundary.x0_mean = b.vector("x0_mean");
    check_len(c.boundary.x0_mean, nx, b.at("x0_mean"));
    c.boundary.P_x0 = b.matrix("P_x0");
    check_shape(c.boundary.P_x0, nx, nx, b.at("P_x0"));
    detail::check_psd(c.boundary.P_x0, b.at("P_x0"), false);
    c.boundary.xf_mean = b.vector("xf_mean");
    check_len(c.boundary.xf_mean, nx, b.at("xf_mean"));
    c.boundary.P_xf = b.matrix("P_xf");
    check_shape(c.boundary.P_xf, nx, nx, b.at("P_xf"));
    detail::check_psd(c.boundary.P_xf, b.at("P_xf"), true);
  }

  {
    auto k = r.object("cost");
    k.keys({"mean", "Qx", "Qu", "w_xf"});
    c.cost.Qx = k.matrix("Qx");
    check_shape(c.cost.Qx, nx, nx, k.at("Qx"));
    detail::check_psd(c.cost.Qx, k.at("Qx"), true);
    c.cost.Qu = k.matrix("Qu");
    check_shape(c.cost.Qu, nu, nu, k.at("Qu"));
    detail::check_psd(c.cost.Qu, k.at("Qu"), false);
    c.cost.w_xf = k.number("w_xf", 1000.0);
    check_range(c.cost.w_xf > 0.0, k.at("w_xf"), "must be > 0");
    if (k.has("mean")) {
      auto m = k.object("mean");
      m.keys({"Ru", "Rx", "x_ref", "q_u", "q_x"});
      auto& mc = c.cost.mean;
      if (m.has("Ru")) {
        mc.Ru = m.matrix("Ru");
        check_shape(mc.Ru, nu, nu, m.at("Ru"));
        detail::check_psd(mc.Ru, m.at("Ru"), false);
      }
      if (m.has("Rx")) {
        mc.Rx = m.matrix("Rx");
        check_shape(mc.Rx, nx, nx, m.at("Rx"));
        detail::check_psd(mc.Rx, m.at("Rx"), false);
      }
      if (m.has("x_ref")) {
        mc.x_ref = m.vector("x_ref");
        check_len(mc.x_ref, nx, m.at("x_ref"));
      }
      if (m.has("q_u")) {
        mc.q_u = m.vector("q_u");
        check_len(mc.q_u, nu, m.at("q_u"));
      }
      if (m.has("q_x")) {
        mc.q_x = m.vector("q_x");
        check_len(mc.q_x, nx, m.at("q_x"));
      }
    }
  }

  if (r.has("constraints")) {
    auto k = r.object("constraints");
    k.keys({"state", "control"});
    auto groups = [&](const char* key, int dim, int lo, int hi) {
      std::vector<ConstraintGroup> out;
      if (!k.has(key)) return out;
      const Json& arr = k.raw(key);
      if (!arr.is_array()) throw ConfigError(k.at(key), "expected an array of groups");
      for (std::size_t gi = 0; gi < arr.size(); ++gi) {
        const std::string gp = k.at(key) + "/" + std::to_string(gi);
        detail::Reader g(arr[gi], gp);
        g.keys({"halfspaces", "risk", "steps"});
        ConstraintGroup grp;
        grp.risk = g.number("risk");
        check_range(grp.risk > 0.0 && grp.risk < 0.5, g.at("risk"), "must lie in (0, 0.5)");
        const Json& hs = g.raw("halfspaces");
        if (!hs.is_array() || hs.empty()) throw ConfigError(g.at("halfspaces"), "expected a non-empty array");
        for (std::size_t hi_ = 0; hi_ < hs.size(); ++hi_) {
          detail::Reader h(hs[hi_], g.at("halfspaces") + "/" + std::to_string(hi_));
          h.keys({"normal", "offset"});
          HalfSpaceConfig half;
          half.normal = h.vector("normal");
          check_len(half.normal, dim, h.at("normal"));
          check_range(to_vec(half.normal).norm() > 0.0, h.at("normal"), "must be nonzero");
          half.offset = h.number("offset");
          grp.halfspaces.push_back(half);
        }
        if (g.has("steps")) {
          const Vector s = g.vector("steps");
          check_range(s.size() == 2, g.at("steps"), "expected [first, last]");
          for (int e = 0; e < 2; ++e) {
            const std::string sp = g.at("steps") + "/" + std::to_string(e);
            check_range(s[e] == std::floor(s[e]), sp, "expected an integer");
            check_range(s[e] >= lo && s[e] <= hi, sp,
                        "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
          }
          check_range(s[0] <= s[1], g.at("steps"), "first must not exceed last");
          grp.first_step = static_cast<int>(s[0]);
          grp.last_step = static_cast<int>(s[1]);
        }
        out.push_back(grp);
      }
      return out;
    };
    c.constraints.state = groups("state", nx, 0, N);
    c.constraints.control = groups("control", nu, 0, N - 1);
  }

  if (r.has("ics")) {
    auto s = r.object("ics");
    s.keys({"max_iterations", "tol", "trust_region", "relaxation", "mean_propagation", "mc_trials",
            "mc_seed", "mc_substeps", "discretization", "substeps", "terminal_policy",
            "warm_start", "initial_guess", "solver"});
    auto& i = c.ics;
    i.max_iterations = s.integer("max_iterations", i.max_iterations);
    check_range(i.max_iterations >= 1, s.at("max_iterations"), "must be >= 1");
    i.tol = s.number("tol", i.tol);
    check_range(i.tol > 0.0, s.at("tol"), "must be > 0");
    if (s.has("trust_region")) {
      auto t = s.object("trust_region");
      t.keys({"delta_x", "delta_u", "p_tr_x", "p_tr_u"});
      i.delta_x = t.number("delta_x", i.delta_x);
      i.delta_u = t.number("delta_u", i.delta_u);
      i.p_tr_x = t.number("p_tr_x", i.p_tr_x);
      i.p_tr_u = t.number("p_tr_u", i.p_tr_u);
      check_range(i.delta_x > 0.0, t.at("delta_x"), "must be > 0");
      check_range(i.delta_u > 0.0, t.at("delta_u"), "must be > 0");
      check_range(i.p_tr_x > 0.0 && i.p_tr_x < 1.0, t.at("p_tr_x"), "must lie in (0, 1)");
      check_range(i.p_tr_u > 0.0 && i.p_tr_u < 1.0, t.at("p_tr_u"), "must lie in (0, 1)");
    }
    if (s.has("relaxation")) {
      auto t = s.object("relaxation");
      t.keys({"n_relax", "rho"});
      i.n_relax = t.integer("n_relax", i.n_relax);
      i.relax_rho = t.number("rho", i.relax_rho);
      check_range(i.n_relax >= 0, t.at("n_relax"), "must be >= 0");
      check_range(i.relax_rho > 0.0 && i.relax_rho <= 1.0, t.at("rho"), "must lie in (0, 1]");
    }
    i.mean_propagation = s.string("mean_propagation", i.mean_propagation);
    check_range(i.mean_propagation == "deterministic" || i.mean_propagation == "monte_carlo",
                s.at("mean_propagation"), "expected \"deterministic\" or \"monte_carlo\"");
    i.mc_trials = s.integer("mc_trials", i.mc_trials);
    check_range(i.mc_trials >= 1, s.at("mc_trials"), "must be >= 1");
    i.mc_seed = s.u64("mc_seed", i.mc_seed);
    i.mc_substeps = s.integer("mc_substeps", i.mc_substeps);
    check_range(i.mc_substeps >= 1, s.at("mc_substeps"), "must be >= 1");
    i.discretization = s.string("discretization", i.discretization);
    check_range(i.discretization == "exact" || i.discretization == "first_order",
                s.at("discretization"), "expected \"exact\" or \"first_order\"");
    i.substeps = s.integer("substeps", i.substeps);
    check_range(i.substeps >= 1, s.at("substeps"), "must be >= 1");
    i.terminal_policy = s.string("terminal_policy", i.terminal_policy);
    check_range(i.terminal_policy == "soft" || i.terminal_policy == "hard" ||
                    i.terminal_policy == "auto_switch",
                s.at("terminal_policy"), "expected \"soft\", \"hard\" or \"auto_switch\"");
    i.warm_start = s.boolean("warm_start", i.warm_start);
    if (s.has("initial_guess")) {
      i.initial_guess = s.matrix("initial_guess");
      const int rows = static_cast<int>(i.initial_guess.size());
      check_range(rows == 1 || rows == N, s.at("initial_guess"), "expected 1 or N rows");
      check_shape(i.initial_guess, rows, nu, s.at("initial_guess"));
    }
    if (s.has("solver")) {
      auto t = s.object("solver");
      t.keys({"eps_primal", "eps_dual", "eps_gap", "max_iter", "rho", "over_relaxation",
              "adaptive_rho"});
      auto& v = i.solver;
      v.eps_primal = t.number("eps_primal", v.eps_primal);
      v.eps_dual = t.number("eps_dual", v.eps_dual);
      v.eps_gap = t.number("eps_gap", v.eps_gap);
      v.max_iter = t.integer("max_iter", v.max_iter);
      v.rho = t.number("rho", v.rho);
      v.over_relaxation = t.number("over_relaxation", v.over_relaxation);
      v.adaptive_rho = t.boolean("adaptive_rho", v.adaptive_rho);
      check_range(v.eps_primal > 0.0, t.at("eps_primal"), "must be > 0");
      check_range(v.eps_dual > 0.0, t.at("eps_dual"), "must be > 0");
      check_range(v.eps_gap > 0.0, t.at("eps_gap"), "must be > 0");
      check_range(v.max_iter >= 1, t.at("max_iter"), "must be >= 1");
      check_range(v.rho > 0.0, t.at("rho"), "must be > 0");
      check_range(v.over_relaxation > 0.0 && v.over_relaxation < 2.0, t.at("over_relaxation"),
                  "must lie in (0, 2)");
    }
  }

  if (r.has("simulation")) {
    auto s = r.object("simulation");
    s.keys({"trials", "substeps", "seed", "record_full_paths", "max_recorded_paths", "threads",
            "ellipse_level", "ellipse_axes"});
    auto& m = c.simulation;
    m.trials = s.integer("trials", m.trials);
    check_range(m.trials >= 1, s.at("trials"), "must be >= 1");
    m.substeps = s.integer("substeps", m.substeps);
    check_range(m.substeps >= 1, s.at("substeps"), "must be >= 1");
    m.seed = s.u64("seed", m.seed);
    m.record_full_paths = s.boolean("record_full_paths", m.record_full_paths);
    m.max_recorded_paths = s.integer("max_recorded_paths", m.max_recorded_paths);
    check_range(m.max_recorded_paths >= 0, s.at("max_recorded_paths"), "must be >= 0");
    m.threads = s.integer("threads", m.threads);
    check_range(m.threads >= 0, s.at("threads"), "must be >= 0");
    m.ellipse_level = s.number("ellipse_level", m.ellipse_level);
    check_range(m.ellipse_level > 0.0 && m.ellipse_level < 1.0, s.at("ellipse_level"),
                "must lie in (0, 1)");
    if (s.has("ellipse_axes")) {
      const Vector a = s.vector("ellipse_axes");
      check_range(a.size() == 2, s.at("ellipse_axes"), "expected two state indices");
      m.ellipse_axes.clear();
      for (int e = 0; e < 2; ++e) {
        const std::string p = s.at("ellipse_axes") + "/" + std::to_string(e);
        check_range(a[e] == std::floor(a[e]) && a[e] >= 0 && a[e] < nx, p,
                    "must be a state index in [0, " + std::to_string(nx) + ")");
        m.ellipse_axes.push_back(static_cast<int>(a[e]));
      }
      check_range(m.ellipse_axes[0] != m.ellipse_axes[1], s.at("ellipse_axes"), "indices must differ");
    }
  }

  c.output_dir = r.string("output_dir", c.output_dir);

  // Remaining cross-field invariants.
  try {
    make_problem(c).validate(nu);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError("", e.what());
  }
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  return from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical form: every field present, defaults included, fixed key order.
inline Json to_json(const RunConfig& c) {
  Json j;
  Json m;
  m["kind"] = c.model.kind;
  if (c.model.kind == "linear") {
    m["A"] = c.model.A;
    m["B"] = c.model.B;
    m["G"] = c.model.G;
  } else {
    m["c_d"] = c.model.c_d;
    m["gamma"] = c.model.gamma;
  }
  j["model"] = m;
  j["horizon"] = {{"N", c.horizon.N}, {"sigma", c.horizon.sigma}};
  j["boundary"] = {{"x0_mean", c.boundary.x0_mean},
                   {"P_x0", c.boundary.P_x0},
                   {"xf_mean", c.boundary.xf_mean},
                   {"P_xf", c.boundary.P_xf}};
  Json mean = Json::object();
  const auto& mc = c.cost.mean;
  if (!mc.Ru.empty()) mean["Ru"] = mc.Ru;
  if (!mc.Rx.empty()) mean["Rx"] = mc.Rx;
  if (!mc.x_ref.empty()) mean["x_ref"] = mc.x_ref;
  if (!mc.q_u.empty()) mean["q_u"] = mc.q_u;
  if (!mc.q_x.empty()) mean["q_x"] = mc.q_x;
  j["cost"] = {{"mean", mean}, {"Qx", c.cost.Qx}, {"Qu", c.cost.Qu}, {"w_xf", c.cost.w_xf}};
  auto groups = [](const std::vector<ConstraintGroup>& gs) {
    Json arr = Json::array();
    for (const auto& g : gs) {
      Json hs = Json::array();
      for (const auto& h : g.halfspaces) hs.push_back({{"normal", h.normal}, {"offset", h.offset}});
      Json o = {{"halfspaces", hs}, {"risk", g.risk}};
      if (g.first_step >= 0) o["steps"] = {g.first_step, g.last_step};
      arr.push_back(o);
    }
    return arr;
  };
  j["constraints"] = {{"state", groups(c.constraints.state)},
                      {"control", groups(c.constraints.control)}};
  const auto& i = c.ics;
  Json ics;
  ics["max_iterations"] = i.max_iterations;
  ics["tol"] = i.tol;
  ics["trust_region"] = {{"delta_x", i.delta_x}, {"delta_u", i.delta_u}, {"p_tr_x", i.p_tr_x},
                         {"p_tr_u", i.p_tr_u}};
  ics["relaxation"] = {{"n_relax", i.n_relax}, {"rho", i.relax_rho}};
  ics["mean_propagation"] = i.mean_propagation;
  ics["mc_trials"] = i.mc_trials;
  ics["mc_seed"] = i.mc_seed;
  ics["mc_substeps"] = i.mc_substeps;
  ics["discretization"] = i.discretization;
  ics["substeps"] = i.substeps;
  ics["terminal_policy"] = i.terminal_policy;
  ics["warm_start"] = i.warm_start;
  if (!i.initial_guess.empty()) ics["initial_guess"] = i.initial_guess;
  ics["solver"] = {{"eps_primal", i.solver.eps_primal},
                   {"eps_dual", i.solver.eps_dual},
                   {"eps_gap", i.solver.eps_gap},
                   {"max_iter", i.solver.max_iter},
                   {"rho", i.solver.rho},
                   {"over_relaxation", i.solver.over_relaxation},
                   {"adaptive_rho", i.solver.adaptive_rho}};
  j["ics"] = ics;
  const auto& s = c.simulation;
  j["simulation"] = {{"trials", s.trials},
                     {"substeps", s.substeps},
                     {"seed", s.seed},
                     {"record_full_paths", s.record_full_paths},
                     {"max_recorded_paths", s.max_recorded_paths},
                     {"threads", s.threads},
                     {"ellipse_level", s.ellipse_level},
                     {"ellipse_axes", s.ellipse_axes}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline std::string emit_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace ics::io
