#include "csteer/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "csteer/benchmarks.hpp"
#include "csteer/errors.hpp"

namespace csteer {
namespace {

using nlohmann::json;

void append_num(std::string& s, double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  s.append(buf, res.ptr);
}

[[noreturn]] void fail_config(const std::string& msg) {
  throw ConfigError("config: " + msg);
}

void check_keys(const json& j, const char* where,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) ok = true;
    if (!ok) fail_config(std::string("unknown key \"") + item.key() + "\" in " + where);
  }
}

double as_number(const json& j, const char* what) {
  if (!j.is_number()) fail_config(std::string(what) + " must be a number");
  return j.get<double>();
}

int as_int(const json& j, const char* what) {
  if (!j.is_number_integer()) fail_config(std::string(what) + " must be an integer");
  return j.get<int>();
}

Eigen::VectorXd parse_vector(const json& j, int n, const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    fail_config(std::string(what) + " must be an array of " + std::to_string(n) +
                " numbers");
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = as_number(j[i], what);
  return v;
}

// Accepts a scalar (s * I), a length-n array (diagonal) or an array of rows.
Eigen::MatrixXd parse_weight(const json& j, int n, const char* what) {
  if (j.is_number())
    return j.get<double>() * Eigen::MatrixXd::Identity(n, n);
  if (j.is_array() && !j.empty() && j[0].is_number())
    return parse_vector(j, n, what).asDiagonal();
  if (j.is_array()) {
    if (static_cast<int>(j.size()) != n)
      fail_config(std::string(what) + " must have " + std::to_string(n) + " rows");
    Eigen::MatrixXd m(n, n);
    for (int r = 0; r < n; ++r) m.row(r) = parse_vector(j[r], n, what).transpose();
    return m;
  }
  fail_config(std::string(what) + " must be a scalar, diagonal or full matrix");
}

Eigen::MatrixXd parse_matrix(const json& j, int rows, int cols,
                             const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    fail_config(std::string(what) + " must have " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) m.row(r) = parse_vector(j[r], cols, what).transpose();
  return m;
}

DistributionSpec parse_spec(const json& j, const char* what) {
  DistributionSpec spec;
  if (j.is_number()) {
    spec = DistributionSpec::point_mass(j.get<double>());
  } else if (j.is_object() && j.contains("point")) {
    check_keys(j, what, {"point"});
    spec = DistributionSpec::point_mass(as_number(j["point"], what));
  } else if (j.is_object() && j.contains("uniform")) {
    check_keys(j, what, {"uniform"});
    const Eigen::VectorXd b = parse_vector(j["uniform"], 2, what);
    spec = DistributionSpec::uniform(b(0), b(1));
  } else if (j.is_object() && j.contains("truncated_gaussian")) {
    check_keys(j, what, {"truncated_gaussian"});
    const json& g = j["truncated_gaussian"];
    check_keys(g, what, {"mean", "variance", "lo", "hi"});
    spec = DistributionSpec::truncated_gaussian(
        as_number(g.at("mean"), what), as_number(g.at("variance"), what),
        as_number(g.at("lo"), what), as_number(g.at("hi"), what));
  } else {
    fail_config(std::string(what) +
                " must be a number, {point}, {uniform} or {truncated_gaussian}");
  }
  spec.validate();
  return spec;
}

std::vector<DistributionSpec> parse_spec_list(const json& j, int n,
                                              const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    fail_config(std::string(what) + " must be an array of " + std::to_string(n) +
                " distributions");
  std::vector<DistributionSpec> out;
  out.reserve(n);
  for (const auto& e : j) out.push_back(parse_spec(e, what));
  return out;
}

UncertainLcs parse_custom_system(const json& j) {
  check_keys(j, "system", {"dims", "A", "B", "C", "D", "E", "F", "g", "h",
                           "x0", "w", "l"});
  const json& jd = j.at("dims");
  check_keys(jd, "system.dims", {"n_x", "n_u", "n_c", "horizon", "dt"});
  Dims dims;
  dims.n_x = as_int(jd.at("n_x"), "n_x");
  dims.n_u = as_int(jd.at("n_u"), "n_u");
  dims.n_c = as_int(jd.at("n_c"), "n_c");
  dims.horizon = as_int(jd.at("horizon"), "horizon");
  dims.dt = jd.contains("dt") ? as_number(jd["dt"], "dt") : 1.0;

  StageMatrices m;
  m.A = parse_matrix(j.at("A"), dims.n_x, dims.n_x, "A");
  m.B = parse_matrix(j.at("B"), dims.n_x, dims.n_u, "B");
  m.C = parse_matrix(j.at("C"), dims.n_x, dims.n_c, "C");
  m.D = parse_matrix(j.at("D"), dims.n_c, dims.n_x, "D");
  m.E = parse_matrix(j.at("E"), dims.n_c, dims.n_u, "E");
  m.F = parse_matrix(j.at("F"), dims.n_c, dims.n_c, "F");
  m.g = j.contains("g") ? parse_vector(j["g"], dims.n_x, "g")
                        : Eigen::VectorXd::Zero(dims.n_x).eval();
  m.h = j.contains("h") ? parse_vector(j["h"], dims.n_c, "h")
                        : Eigen::VectorXd::Zero(dims.n_c).eval();
  m.validate(dims);

  UncertainLcs sys;
  sys.dims = dims;
  sys.stage_builder = [m](int, const ParameterMap&) { return m; };
  sys.initial_state_specs = parse_spec_list(j.at("x0"), dims.n_x, "x0");
  const auto zeros = [](int n) {
    return std::vector<DistributionSpec>(n, DistributionSpec::point_mass(0.0));
  };
  sys.process_noise_specs = j.contains("w")
                                ? parse_spec_list(j["w"], dims.n_x, "w")
                                : zeros(dims.n_x);
  sys.complementarity_noise_specs =
      j.contains("l") ? parse_spec_list(j["l"], dims.n_c, "l") : zeros(dims.n_c);
  sys.validate();
  return sys;
}

UncertainLcs build_builtin(const std::string& name, const json* overrides) {
  if (name == "cartpole") {
    CartpoleParams p;
    if (overrides) {
      check_keys(*overrides, "system",
                 {"name", "horizon", "dt", "d", "k1", "k2", "x0"});
      const json& o = *overrides;
      if (o.contains("horizon")) p.horizon = as_int(o["horizon"], "horizon");
      if (o.contains("dt")) p.dt = as_number(o["dt"], "dt");
      if (o.contains("d")) p.d = as_number(o["d"], "d");
      if (o.contains("k1")) p.k1_spec = parse_spec(o["k1"], "k1");
      if (o.contains("k2")) p.k2_spec = parse_spec(o["k2"], "k2");
      if (o.contains("x0")) p.x0_specs = parse_spec_list(o["x0"], 4, "x0");
    }
    return make_cartpole(p);
  }
  if (name == "acrobot") {
    AcrobotParams p;
    if (overrides) {
      check_keys(*overrides, "system",
                 {"name", "horizon", "dt", "d", "k", "l2", "x0"});
      const json& o = *overrides;
      if (o.contains("horizon")) p.horizon = as_int(o["horizon"], "horizon");
      if (o.contains("dt")) p.dt = as_number(o["dt"], "dt");
      if (o.contains("d")) p.d = as_number(o["d"], "d");
      if (o.contains("k")) p.k_spec = parse_spec(o["k"], "k");
      if (o.contains("l2")) p.l2_spec = parse_spec(o["l2"], "l2");
      if (o.contains("x0")) p.x0_specs = parse_spec_list(o["x0"], 4, "x0");
    }
    return make_acrobot(p);
  }
  fail_config("unknown system \"" + name + "\" (builtins: cartpole, acrobot)");
}

void parse_steering(const json& j, const Dims& dims, SteeringConfig& cfg) {
  check_keys(j, "steering",
             {"Q", "R", "x_d", "delta", "mode", "epsilon_boundary",
              "control_bounds", "control_halfspaces", "safe", "safe_box"});
  if (j.contains("Q")) cfg.Q = parse_weight(j["Q"], dims.n_x, "Q");
  if (j.contains("R")) cfg.R = parse_weight(j["R"], dims.n_u, "R");
  if (j.contains("x_d")) cfg.x_d = parse_vector(j["x_d"], dims.n_x, "x_d");
  if (j.contains("delta")) cfg.Delta = as_number(j["delta"], "delta");
  if (j.contains("mode")) cfg.mode = mode_from_string(j["mode"].get<std::string>());
  if (j.contains("epsilon_boundary"))
    cfg.epsilon_boundary = as_number(j["epsilon_boundary"], "epsilon_boundary");

  if (j.contains("control_bounds")) {
    const Eigen::VectorXd b = parse_vector(j["control_bounds"], dims.n_u,
                                           "control_bounds");
    cfg.control_polytope.clear();
    for (int i = 0; i < dims.n_u; ++i) {
      if (!(b(i) > 0.0)) fail_config("control_bounds entries must be positive");
      Eigen::VectorXd e = Eigen::VectorXd::Zero(dims.n_u);
      e(i) = 1.0;
      cfg.control_polytope.push_back({e, b(i)});
      cfg.control_polytope.push_back({-e, b(i)});
    }
  }
  if (j.contains("control_halfspaces")) {
    for (const auto& h : j["control_halfspaces"]) {
      check_keys(h, "control_halfspaces", {"c", "d"});
      cfg.control_polytope.push_back(
          {parse_vector(h.at("c"), dims.n_u, "c"), as_number(h.at("d"), "d")});
    }
  }

  if (j.contains("safe")) {
    for (const auto& c : j["safe"]) {
      check_keys(c, "safe", {"step", "a", "b"});
      SafeConstraint sc;
      sc.step = as_int(c.at("step"), "safe step");
      sc.a = parse_vector(c.at("a"), dims.n_x, "safe a");
      sc.b = as_number(c.at("b"), "safe b");
      cfg.safe.constraints.push_back(sc);
    }
  }
  if (j.contains("safe_box")) {
    for (const auto& box : j["safe_box"]) {
      check_keys(box, "safe_box", {"coord", "lo", "hi", "steps"});
      const int coord = as_int(box.at("coord"), "safe_box coord");
      if (coord < 0 || coord >= dims.n_x) fail_config("safe_box coord out of range");
      std::vector<int> steps;
      const json& js = box.at("steps");
      if (js.is_string() && js.get<std::string>() == "all") {
        for (int k = 1; k <= dims.horizon; ++k) steps.push_back(k);
      } else if (js.is_array()) {
        for (const auto& s : js) steps.push_back(as_int(s, "safe_box step"));
      } else {
        fail_config("safe_box steps must be an array or \"all\"");
      }
      for (int k : steps) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(dims.n_x);
        e(coord) = 1.0;
        if (box.contains("hi"))
          cfg.safe.constraints.push_back({k, e, as_number(box["hi"], "hi")});
        if (box.contains("lo"))
          cfg.safe.constraints.push_back({k, -e, -as_number(box["lo"], "lo")});
      }
    }
  }
}

void parse_refinement(const json& j, RunConfig& rc) {
  check_keys(j, "refinement", {"alpha", "beta", "gamma", "eta", "max_iter",
                               "delta_th", "enabled"});
  RefinementParams& p = rc.refinement;
  if (j.contains("alpha")) p.alpha = as_int(j["alpha"], "alpha");
  if (j.contains("beta")) p.beta = as_int(j["beta"], "beta");
  if (j.contains("gamma")) p.gamma = as_int(j["gamma"], "gamma");
  if (j.contains("eta")) p.eta = as_int(j["eta"], "eta");
  if (j.contains("max_iter")) p.max_iter = as_int(j["max_iter"], "max_iter");
  if (j.contains("delta_th")) p.delta_th = as_number(j["delta_th"], "delta_th");
  if (j.contains("enabled")) {
    if (!j["enabled"].is_boolean()) fail_config("refinement.enabled must be a bool");
    rc.refine = j["enabled"].get<bool>();
  }
}

void parse_solver(const json& j, SolverOptions& s) {
  check_keys(j, "solver",
             {"tol_kkt", "tol_feas", "tol_comp", "eps_start", "eps_end",
              "eps_factor", "max_total_iterations", "log_path"});
  if (j.contains("tol_kkt")) s.tol_kkt = as_number(j["tol_kkt"], "tol_kkt");
  if (j.contains("tol_feas")) s.tol_feas = as_number(j["tol_feas"], "tol_feas");
  if (j.contains("tol_comp")) s.tol_comp = as_number(j["tol_comp"], "tol_comp");
  if (j.contains("eps_start")) s.eps_start = as_number(j["eps_start"], "eps_start");
  if (j.contains("eps_end")) s.eps_end = as_number(j["eps_end"], "eps_end");
  if (j.contains("eps_factor"))
    s.eps_factor = as_number(j["eps_factor"], "eps_factor");
  if (j.contains("max_total_iterations"))
    s.max_total_iterations = as_int(j["max_total_iterations"], "max_total_iterations");
  if (j.contains("log_path")) s.log_path = j["log_path"].get<std::string>();
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json parse_json_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

bool all_equal(const std::vector<double>& v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

double field_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  // Identical samples have that exact value as mean; summation noise must
  // not leak into degenerate coordinates.
  if (all_equal(v)) return v[0];
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double field_var(const std::vector<double>& v, double mean) {
  if (v.size() < 2 || all_equal(v)) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

std::string mode_to_string(PolicyMode mode) {
  switch (mode) {
    case PolicyMode::OpenLoop: return "open-loop";
    case PolicyMode::StateFeedback: return "state-fb";
    case PolicyMode::ContactAware: return "contact-aware";
  }
  throw ConfigError("unknown policy mode value");
}

PolicyMode mode_from_string(const std::string& s) {
  if (s == "open-loop") return PolicyMode::OpenLoop;
  if (s == "state-fb") return PolicyMode::StateFeedback;
  if (s == "contact-aware") return PolicyMode::ContactAware;
  throw ConfigError("unknown mode \"" + s +
                    "\" (expected open-loop, state-fb or contact-aware)");
}

namespace {

// Shipped steering defaults for a builtin, sized from the dims actually
// built so horizon overrides keep the safe set in range.
void apply_default_steering(RunConfig& rc) {
  const Dims& d = rc.system.dims;
  SteeringConfig& st = rc.steering;
  st.Q = Eigen::Vector4d(1.0, 1.0, 0.1, 0.1).asDiagonal();
  st.R = Eigen::MatrixXd::Constant(1, 1, 0.01);
  st.x_d = Eigen::VectorXd::Zero(d.n_x);
  st.mode = PolicyMode::ContactAware;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(d.n_u);
  e(0) = 1.0;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(d.n_x);
  a(0) = 1.0;
  const double u_max = rc.system_name == "cartpole" ? 20.0 : 10.0;
  const double bound = rc.system_name == "cartpole" ? 0.25 : 0.3;
  st.Delta = rc.system_name == "cartpole" ? 0.6 : 0.4;
  st.control_polytope = {{e, u_max}, {-e, u_max}};
  st.safe.constraints.clear();
  for (int k = 1; k <= d.horizon; ++k) {
    st.safe.constraints.push_back({k, a, bound});
    st.safe.constraints.push_back({k, -a, bound});
  }
}

}  // namespace

RunConfig default_run_config(const std::string& system_name) {
  RunConfig rc;
  rc.system_name = system_name;
  rc.system = build_builtin(system_name, nullptr);
  apply_default_steering(rc);
  return rc;
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_json_text(json_text, "config");
  if (!j.is_object()) fail_config("top level must be an object");
  check_keys(j, "config", {"system", "steering", "refinement", "solver", "seed",
                           "threads", "particles", "out"});

  RunConfig rc;
  const json* overrides = nullptr;
  std::string name = "cartpole";
  bool custom = false;
  if (j.contains("system")) {
    const json& js = j["system"];
    if (js.is_string()) {
      name = js.get<std::string>();
    } else if (js.is_object() && js.contains("name")) {
      name = js["name"].get<std::string>();
      overrides = &js;
    } else if (js.is_object()) {
      custom = true;
      rc.system = parse_custom_system(js);
      rc.system_name = "custom";
    } else {
      fail_config("system must be a builtin name or an object");
    }
  }
  if (!custom) {
    rc.system_name = name;
    rc.system = build_builtin(name, overrides);
    apply_default_steering(rc);
  }

  const Dims& dims = rc.system.dims;
  if (custom) {
    // A custom system starts from neutral weights; the config must say what
    // it wants tracked and bounded.
    rc.steering.Q = Eigen::MatrixXd::Identity(dims.n_x, dims.n_x);
    rc.steering.R = 0.01 * Eigen::MatrixXd::Identity(dims.n_u, dims.n_u);
    rc.steering.x_d = Eigen::VectorXd::Zero(dims.n_x);
  }
  if (j.contains("steering")) {
    // Safe sets and control polytopes from the config replace the defaults
    // entirely rather than stacking on top of them.
    const json& js = j["steering"];
    if (js.contains("safe") || js.contains("safe_box"))
      rc.steering.safe.constraints.clear();
    if (js.contains("control_bounds") || js.contains("control_halfspaces"))
      rc.steering.control_polytope.clear();
    parse_steering(js, dims, rc.steering);
  }
  if (j.contains("refinement")) parse_refinement(j["refinement"], rc);
  if (j.contains("solver")) parse_solver(j["solver"], rc.solver);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<std::int64_t>() < 0)
      fail_config("seed must be a nonnegative integer");
    rc.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("threads")) {
    rc.threads = as_int(j["threads"], "threads");
    if (rc.threads < 1) fail_config("threads must be >= 1");
  }
  if (j.contains("particles")) {
    rc.n_particles = as_int(j["particles"], "particles");
    if (rc.n_particles < 0) fail_config("particles must be >= 0");
  }
  if (j.contains("out")) rc.out_dir = j["out"].get<std::string>();

  rc.system.validate();
  rc.steering.validate(dims);
  rc.steering.safe.validate(dims);
  rc.refinement.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

void save_policy(const std::string& path, const ControllerPolicy& policy,
                 const Dims& dims) {
  policy.validate(dims);
  json j;
  j["dims"] = {{"n_x", dims.n_x}, {"n_u", dims.n_u}, {"n_c", dims.n_c},
               {"horizon", dims.horizon}, {"dt", dims.dt}};
  j["mode"] = mode_to_string(policy.mode);
  j["v"] = mat_to_json(policy.v);
  json K = json::array(), L = json::array();
  for (const auto& m : policy.K) K.push_back(mat_to_json(m));
  for (const auto& m : policy.L) L.push_back(mat_to_json(m));
  j["K"] = std::move(K);
  j["L"] = std::move(L);
  j["x_ref"] = mat_to_json(policy.x_ref);
  j["lambda_ref"] = mat_to_json(policy.lambda_ref);
  write_text_file(path, j.dump(2) + "\n");
}

std::pair<ControllerPolicy, Dims> load_policy(const std::string& path) {
  const json j = parse_json_text(read_text_file(path), "policy");
  check_keys(j, "policy", {"dims", "mode", "v", "K", "L", "x_ref", "lambda_ref"});
  const json& jd = j.at("dims");
  Dims dims;
  dims.n_x = as_int(jd.at("n_x"), "n_x");
  dims.n_u = as_int(jd.at("n_u"), "n_u");
  dims.n_c = as_int(jd.at("n_c"), "n_c");
  dims.horizon = as_int(jd.at("horizon"), "horizon");
  dims.dt = as_number(jd.at("dt"), "dt");

  ControllerPolicy p;
  p.mode = mode_from_string(j.at("mode").get<std::string>());
  p.v = parse_matrix(j.at("v"), dims.horizon, dims.n_u, "v");
  const json& jk = j.at("K");
  const json& jl = j.at("L");
  if (static_cast<int>(jk.size()) != dims.horizon ||
      static_cast<int>(jl.size()) != dims.horizon)
    throw ConfigError("policy: K and L must each have horizon entries");
  for (int k = 0; k < dims.horizon; ++k) {
    p.K.push_back(parse_matrix(jk[k], dims.n_u, dims.n_x, "K"));
    p.L.push_back(parse_matrix(jl[k], dims.n_u, dims.n_c, "L"));
  }
  p.x_ref = parse_matrix(j.at("x_ref"), dims.horizon + 1, dims.n_x, "x_ref");
  p.lambda_ref = parse_matrix(j.at("lambda_ref"), dims.horizon, dims.n_c,
                              "lambda_ref");
  p.validate(dims);
  return {std::move(p), dims};
}

void write_trajectories_csv(const std::string& path,
                            std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw EmptyInput("no trajectories to write");
  const int n_x = static_cast<int>(trajectories[0].x.cols());
  const int n_c = static_cast<int>(trajectories[0].lambda.cols());
  const int n_u = static_cast<int>(trajectories[0].u.cols());
  const int T = static_cast<int>(trajectories[0].u.rows());

  std::string s = "traj,step";
  for (int i = 0; i < n_x; ++i) s += ",x" + std::to_string(i);
  for (int c = 0; c < n_c; ++c) s += ",lam" + std::to_string(c);
  for (int i = 0; i < n_u; ++i) s += ",u" + std::to_string(i);
  s += "\n";

  for (size_t t = 0; t < trajectories.size(); ++t) {
    const Trajectory& tr = trajectories[t];
    if (tr.x.rows() != T + 1 || tr.x.cols() != n_x || tr.lambda.rows() != T ||
        tr.lambda.cols() != n_c || tr.u.rows() != T || tr.u.cols() != n_u)
      throw DimensionMismatch("trajectory " + std::to_string(t) +
                              " has inconsistent shape");
    for (int k = 0; k <= T; ++k) {
      s += std::to_string(t);
      s += ',';
      s += std::to_string(k);
      for (int i = 0; i < n_x; ++i) {
        s += ',';
        append_num(s, tr.x(k, i));
      }
      for (int c = 0; c < n_c; ++c) {
        s += ',';
        if (k > 0) append_num(s, tr.lambda(k - 1, c));
      }
      for (int i = 0; i < n_u; ++i) {
        s += ',';
        if (k < T) append_num(s, tr.u(k, i));
      }
      s += '\n';
    }
  }
  write_text_file(path, s);
}

std::vector<Trajectory> read_trajectories_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  int n_x = 0, n_c = 0, n_u = 0;
  {
    std::istringstream hs(line);
    std::string col;
    int idx = 0;
    while (std::getline(hs, col, ',')) {
      if (idx == 0 && col != "traj") throw IoError(path + ": bad header");
      if (col.rfind("x", 0) == 0) ++n_x;
      if (col.rfind("lam", 0) == 0) ++n_c;
      if (col.rfind("u", 0) == 0) ++n_u;
      ++idx;
    }
    if (n_x == 0) throw IoError(path + ": no state columns");
  }

  struct Row {
    int step;
    std::vector<double> vals;  // NaN marks an empty field
  };
  std::map<long, std::vector<Row>> by_traj;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<double> vals;
    while (std::getline(ls, field, ',')) {
      if (field.empty()) {
        vals.push_back(nan);
      } else {
        double v = 0.0;
        auto res = std::from_chars(field.data(), field.data() + field.size(), v);
        if (res.ec != std::errc{})
          throw IoError(path + ":" + std::to_string(line_no) + ": bad number");
        vals.push_back(v);
      }
    }
    if (line.back() == ',') vals.push_back(nan);
    if (static_cast<int>(vals.size()) != 2 + n_x + n_c + n_u)
      throw IoError(path + ":" + std::to_string(line_no) + ": wrong column count");
    Row r;
    r.step = static_cast<int>(vals[1]);
    r.vals.assign(vals.begin() + 2, vals.end());
    by_traj[static_cast<long>(vals[0])].push_back(std::move(r));
  }
  if (by_traj.empty()) throw IoError(path + ": no data rows");

  std::vector<Trajectory> out;
  for (auto& [id, rows] : by_traj) {
    const int T = static_cast<int>(rows.size()) - 1;
    if (T < 1) throw IoError(path + ": trajectory " + std::to_string(id) +
                             " has fewer than two steps");
    Trajectory tr;
    tr.x.resize(T + 1, n_x);
    tr.lambda.resize(T, n_c);
    tr.u.resize(T, n_u);
    std::vector<bool> seen(T + 1, false);
    for (const Row& r : rows) {
      if (r.step < 0 || r.step > T || seen[r.step])
        throw IoError(path + ": trajectory " + std::to_string(id) +
                      " has missing or duplicate steps");
      seen[r.step] = true;
      for (int i = 0; i < n_x; ++i) tr.x(r.step, i) = r.vals[i];
      if (r.step > 0)
        for (int c = 0; c < n_c; ++c) tr.lambda(r.step - 1, c) = r.vals[n_x + c];
      if (r.step < T)
        for (int i = 0; i < n_u; ++i) tr.u(r.step, i) = r.vals[n_x + n_c + i];
    }
    out.push_back(std::move(tr));
  }
  return out;
}

void write_moments_csv(const std::string& path,
                       std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw EmptyInput("no trajectories to summarize");
  const int n_x = static_cast<int>(trajectories[0].x.cols());
  const int n_c = static_cast<int>(trajectories[0].lambda.cols());
  const int T = static_cast<int>(trajectories[0].u.rows());

  std::string s = "step";
  for (int i = 0; i < n_x; ++i)
    s += ",mean_x" + std::to_string(i) + ",var_x" + std::to_string(i);
  for (int c = 0; c < n_c; ++c)
    s += ",mean_lam" + std::to_string(c) + ",var_lam" + std::to_string(c);
  s += "\n";

  std::vector<double> vals(trajectories.size());
  for (int k = 0; k <= T; ++k) {
    s += std::to_string(k);
    for (int i = 0; i < n_x; ++i) {
      for (size_t t = 0; t < trajectories.size(); ++t)
        vals[t] = trajectories[t].x(k, i);
      const double m = field_mean(vals);
      s += ',';
      append_num(s, m);
      s += ',';
      append_num(s, field_var(vals, m));
    }
    for (int c = 0; c < n_c; ++c) {
      s += ',';
      if (k > 0) {
        for (size_t t = 0; t < trajectories.size(); ++t)
          vals[t] = trajectories[t].lambda(k - 1, c);
        const double m = field_mean(vals);
        append_num(s, m);
        s += ',';
        append_num(s, field_var(vals, m));
      } else {
        s += ',';
      }
    }
    s += '\n';
  }
  write_text_file(path, s);
}

void write_violations_csv(const std::string& path, const SafetyEstimate& est,
                          const SafeSet& safe) {
  std::string s = "particle,margin,safe,failed\n";
  for (size_t i = 0; i < est.trajectories.size(); ++i) {
    s += std::to_string(i);
    s += ',';
    if (est.trajectories[i].has_value()) {
      const double m = violation(*est.trajectories[i], safe);
      append_num(s, m);
      s += m <= 0.0 ? ",1,0\n" : ",0,0\n";
    } else {
      s += "inf,0,1\n";
    }
  }
  write_text_file(path, s);
}

void write_report_json(const std::string& path, const OptimizeOutcome& o) {
  json j;
  j["system"] = o.system_name;
  j["mode"] = mode_to_string(o.mode);
  j["delta"] = o.delta_commanded;
  j["seed"] = o.seed;
  j["status"] = o.status;
  j["delta_train"] = o.delta_train ? json(*o.delta_train) : json(nullptr);
  j["delta_test"] = o.delta_test ? json(*o.delta_test) : json(nullptr);

  json iters = json::array();
  json iter_times = json::array();
  for (size_t k = 0; k < o.log.iterations.size(); ++k) {
    const RefinementIteration& it = o.log.iterations[k];
    json e;
    e["iter"] = k;
    e["n_particles"] = it.n_particles;
    e["status"] = to_string(it.status);
    e["delta_train"] = it.delta_train ? json(*it.delta_train) : json(nullptr);
    e["selected"] = it.selected;
    iters.push_back(std::move(e));
    iter_times.push_back(it.wall_time);
  }
  j["iterations"] = std::move(iters);
  j["timing"] = {{"total_s", o.total_time}, {"iteration_s", std::move(iter_times)}};
  write_text_file(path, j.dump(2) + "\n");
}

void write_refinement_log_csv(const std::string& path,
                              const RefinementLog& log) {
  std::string s = "iter,n_p,status,Delta_train,Delta_test,T_s\n";
  for (size_t k = 0; k < log.iterations.size(); ++k) {
    const RefinementIteration& it = log.iterations[k];
    s += std::to_string(k);
    s += ',';
    s += std::to_string(it.n_particles);
    s += ',';
    s += to_string(it.status);
    s += ',';
    if (it.delta_train) append_num(s, *it.delta_train);
    s += ',';
    if (k + 1 == log.iterations.size()) append_num(s, log.delta_test);
    s += ',';
    append_num(s, it.wall_time);
    s += '\n';
  }
  write_text_file(path, s);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path);
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("cannot write " + path);
}

}  // namespace csteer
