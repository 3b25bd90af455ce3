#include "csteer/cli.hpp"

#include <CLI11.hpp>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "csteer/errors.hpp"
#include "csteer/io.hpp"
#include "csteer/plot.hpp"
#include "csteer/refinement.hpp"
#include "csteer/rollout.hpp"
#include "csteer/steering.hpp"

namespace csteer {
namespace {

namespace fs = std::filesystem;

int log_level() {
  const char* env = std::getenv("CONTACT_STEER_LOG");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0') return 1;
  return static_cast<int>(v);
}

void log_line(int level, const std::string& msg) {
  if (log_level() >= level) std::cerr << msg << "\n";
}

struct Flags {
  std::string config_path;
  std::string system_name;
  std::string mode;
  std::string policy_path;
  std::string input_path;
  std::string out_dir;
  std::string deltas;
  std::string modes;
  std::optional<double> delta;
  std::optional<int> particles;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool no_refine = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--system", f.system_name,
                  "builtin system name (cartpole or acrobot)");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--threads", f.threads, "worker thread cap");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--particles", f.particles, "sample count override");
}

RunConfig assemble(const Flags& f) {
  if (!f.config_path.empty() && !f.system_name.empty())
    throw ConfigError("pass --system inside the config file or alone, not both");
  RunConfig rc;
  if (!f.config_path.empty()) {
    rc = load_run_config(f.config_path);
  } else {
    rc = default_run_config(f.system_name.empty() ? "cartpole" : f.system_name);
  }
  if (!f.mode.empty()) rc.steering.mode = mode_from_string(f.mode);
  if (f.delta) rc.steering.Delta = *f.delta;
  if (f.seed) rc.seed = *f.seed;
  if (f.threads) rc.threads = *f.threads;
  if (f.particles) rc.n_particles = *f.particles;
  if (!f.out_dir.empty()) rc.out_dir = f.out_dir;
  if (f.no_refine) rc.refine = false;
  if (rc.threads < 1) throw ConfigError("threads must be >= 1");
  if (rc.n_particles < 0) throw ConfigError("particles must be >= 0");

  rc.steering.validate(rc.system.dims);
  rc.steering.safe.validate(rc.system.dims);
  rc.refinement.validate();
  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  if (ec) throw IoError("cannot create directory " + rc.out_dir);
  if (log_level() >= 2 && rc.solver.log_path.empty())
    rc.solver.log_path = (fs::path(rc.out_dir) / "solver_log.csv").string();
  return rc;
}

std::string out_file(const RunConfig& rc, const char* name) {
  return (fs::path(rc.out_dir) / name).string();
}

int cmd_simulate(const Flags& f) {
  RunConfig rc = assemble(f);
  const int n = rc.n_particles > 0 ? rc.n_particles : 100;
  ControllerPolicy policy = ControllerPolicy::zero(rc.system.dims);
  if (!f.policy_path.empty()) {
    policy = load_policy(f.policy_path).first;
    policy.validate(rc.system.dims);
  }
  log_line(1, "[simulate] " + rc.system_name + ", " + std::to_string(n) +
                  " rollouts, seed " + std::to_string(rc.seed));
  const SafetyEstimate est = estimate_safety(rc.system, policy,
                                             rc.steering.safe, n, rc.seed,
                                             rc.threads);
  const std::vector<Trajectory> valid = collect_valid(est.trajectories);
  if (valid.empty()) throw NoSolutionFound("every rollout failed");
  write_trajectories_csv(out_file(rc, "trajectories.csv"), valid);
  write_moments_csv(out_file(rc, "moments.csv"), valid);
  std::cout << "rollouts=" << n << " failed=" << n - valid.size()
            << " delta_hat=" << est.delta_hat << "\n"
            << "wrote " << out_file(rc, "trajectories.csv") << "\n"
            << "wrote " << out_file(rc, "moments.csv") << "\n";
  return exit_code::ok;
}

// Shared by optimize and each sweep cell. Fills `policy` when one exists.
OptimizeOutcome run_optimize(const RunConfig& rc, ControllerPolicy& policy,
                             bool& have_policy) {
  OptimizeOutcome o;
  o.system_name = rc.system_name;
  o.mode = rc.steering.mode;
  o.delta_commanded = rc.steering.Delta;
  o.seed = rc.seed;
  have_policy = false;

  const auto t0 = std::chrono::steady_clock::now();
  if (rc.refine) {
    try {
      RefinementResult res = important_particle(rc.system, rc.steering,
                                                rc.refinement, rc.seed,
                                                rc.solver, rc.threads);
      o.status = "Optimal";
      o.log = res.log;
      o.delta_test = res.delta_test;
      policy = std::move(res.policy);
      have_policy = true;
    } catch (const NoFeasibleSolutionEver&) {
      o.status = "NoFeasibleSolutionEver";
    }
    for (auto it = o.log.iterations.rbegin(); it != o.log.iterations.rend();
         ++it) {
      if (it->delta_train) {
        o.delta_train = it->delta_train;
        break;
      }
    }
  } else {
    const int n = rc.n_particles > 0 ? rc.n_particles : rc.refinement.gamma;
    std::vector<Particle> particles;
    particles.reserve(n);
    for (int i = 0; i < n; ++i)
      particles.push_back(sample_particle(rc.system, rc.seed, i));
    const NlpProblem p = build_mpcc(rc.system, particles, rc.steering);
    const SolveReport rep = solve(p, rc.solver);
    o.status = to_string(rep.status);
    if (rep.status == NlpStatus::Optimal) {
      policy = extract_policy(rc.system, particles, rep, rc.steering);
      have_policy = true;
      o.delta_test = estimate_safety(rc.system, policy, rc.steering.safe,
                                     rc.refinement.beta,
                                     refinement_test_seed(rc.seed), rc.threads)
                         .delta_hat;
    }
  }
  o.total_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return o;
}

int status_exit_code(const std::string& status) {
  if (status == "Optimal") return exit_code::ok;
  if (status == "Infeasible" || status == "NoFeasibleSolutionEver")
    return exit_code::infeasible;
  return exit_code::solver;
}

int cmd_optimize(const Flags& f) {
  RunConfig rc = assemble(f);
  log_line(1, "[optimize] " + rc.system_name + ", mode " +
                  mode_to_string(rc.steering.mode) + ", delta " +
                  std::to_string(rc.steering.Delta));
  ControllerPolicy policy;
  bool have_policy = false;
  const OptimizeOutcome o = run_optimize(rc, policy, have_policy);
  if (have_policy)
    save_policy(out_file(rc, "policy.json"), policy, rc.system.dims);
  write_report_json(out_file(rc, "report.json"), o);
  if (!o.log.iterations.empty())
    write_refinement_log_csv(out_file(rc, "refinement_log.csv"), o.log);
  std::cout << "status=" << o.status;
  if (o.delta_train) std::cout << " delta_train=" << *o.delta_train;
  if (o.delta_test) std::cout << " delta_test=" << *o.delta_test;
  std::cout << "\nwrote " << out_file(rc, "report.json") << "\n";
  if (have_policy) std::cout << "wrote " << out_file(rc, "policy.json") << "\n";
  return status_exit_code(o.status);
}

int cmd_evaluate(const Flags& f) {
  RunConfig rc = assemble(f);
  auto [policy, pdims] = load_policy(f.policy_path);
  policy.validate(rc.system.dims);
  const int n = rc.n_particles > 0 ? rc.n_particles : 1000;
  log_line(1, "[evaluate] " + rc.system_name + ", " + std::to_string(n) +
                  " particles, seed " + std::to_string(rc.seed));
  const SafetyEstimate est = estimate_safety(rc.system, policy,
                                             rc.steering.safe, n, rc.seed,
                                             rc.threads);
  int failed = 0;
  for (const auto& t : est.trajectories)
    if (!t.has_value()) ++failed;

  write_violations_csv(out_file(rc, "violations.csv"), est, rc.steering.safe);
  std::string j = "{\n  \"delta_hat\": ";
  // Short hand-rolled JSON keeps this file free of timing fields.
  {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), est.delta_hat);
    j.append(buf, res.ptr);
  }
  j += ",\n  \"failed\": " + std::to_string(failed);
  j += ",\n  \"n\": " + std::to_string(n);
  j += ",\n  \"seed\": " + std::to_string(rc.seed);
  j += ",\n  \"system\": \"" + rc.system_name + "\"\n}\n";
  write_text_file(out_file(rc, "evaluation.json"), j);
  std::cout << "delta_hat=" << est.delta_hat << " failed=" << failed << "\n"
            << "wrote " << out_file(rc, "evaluation.json") << "\n"
            << "wrote " << out_file(rc, "violations.csv") << "\n";
  return exit_code::ok;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int cmd_sweep(const Flags& f) {
  RunConfig base = assemble(f);
  const std::vector<std::string> modes =
      split_list(f.modes.empty() ? "open-loop,state-fb,contact-aware" : f.modes);
  const std::vector<std::string> deltas_s =
      split_list(f.deltas.empty() ? "0.8,0.7,0.6,0.4,0.2" : f.deltas);
  if (modes.empty() || deltas_s.empty())
    throw ConfigError("sweep needs nonempty --modes and --deltas");
  std::vector<double> deltas;
  for (const std::string& d : deltas_s) {
    try {
      deltas.push_back(std::stod(d));
    } catch (const std::exception&) {
      throw ConfigError("bad delta \"" + d + "\" in --deltas");
    }
  }

  std::string csv = "mode,delta,status,delta_test\n";
  for (const std::string& mode : modes) {
    for (double delta : deltas) {
      RunConfig rc = base;
      rc.steering.mode = mode_from_string(mode);
      rc.steering.Delta = delta;
      rc.steering.validate(rc.system.dims);
      log_line(1, "[sweep] mode " + mode + ", delta " + std::to_string(delta));
      std::string status;
      std::optional<double> delta_test;
      try {
        ControllerPolicy policy;
        bool have_policy = false;
        const OptimizeOutcome o = run_optimize(rc, policy, have_policy);
        status = o.status;
        delta_test = o.delta_test;
      } catch (const std::exception& e) {
        // A broken cell is recorded and the sweep moves on.
        status = "Error";
        log_line(1, std::string("[sweep] cell failed: ") + e.what());
      }
      csv += mode + ",";
      {
        char buf[40];
        auto res = std::to_chars(buf, buf + sizeof(buf), delta);
        csv.append(buf, res.ptr);
      }
      csv += "," + status + ",";
      if (delta_test) {
        char buf[40];
        auto res = std::to_chars(buf, buf + sizeof(buf), *delta_test);
        csv.append(buf, res.ptr);
      }
      csv += "\n";
    }
  }
  write_text_file(out_file(base, "sweep.csv"), csv);
  std::cout << csv << "wrote " << out_file(base, "sweep.csv") << "\n";
  return exit_code::ok;
}

int cmd_plot(const Flags& f) {
  SafeSet safe;
  if (!f.config_path.empty() || !f.system_name.empty())
    safe = assemble(f).steering.safe;
  const std::vector<Trajectory> trajs = read_trajectories_csv(f.input_path);
  PlotOptions opts;
  opts.title = fs::path(f.input_path).stem().string();
  const std::string svg = render_state_svg(trajs, safe, opts);
  const std::string out =
      (fs::path(f.out_dir.empty() ? "out" : f.out_dir) / "plot.svg").string();
  write_text_file(out, svg);
  std::cout << "wrote " << out << "\n";
  return exit_code::ok;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"chance-constrained covariance steering for stochastic "
               "complementarity systems"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* sim = app.add_subcommand(
      "simulate", "roll out a policy over sampled particles");
  add_common(sim, f);
  sim->add_option("--policy", f.policy_path, "policy JSON (default: zero)");

  CLI::App* opt = app.add_subcommand(
      "optimize", "synthesize a policy for the configured chance constraint");
  add_common(opt, f);
  opt->add_option("--mode", f.mode, "open-loop, state-fb or contact-aware")
      ->check(CLI::IsMember({"open-loop", "state-fb", "contact-aware"}));
  opt->add_option("--delta", f.delta, "required safety probability");
  opt->add_flag("--no-refine", f.no_refine,
                "single solve on a fixed particle set");

  CLI::App* eva = app.add_subcommand(
      "evaluate", "Monte Carlo safety estimate for a saved policy");
  add_common(eva, f);
  eva->add_option("--policy", f.policy_path, "policy JSON")->required();

  CLI::App* swp = app.add_subcommand(
      "sweep", "optimize over a delta and mode grid");
  add_common(swp, f);
  swp->add_option("--deltas", f.deltas, "comma-separated safety levels");
  swp->add_option("--modes", f.modes, "comma-separated mode list");
  swp->add_flag("--no-refine", f.no_refine,
                "single solve on a fixed particle set");

  CLI::App* plt = app.add_subcommand("plot", "render trajectories to SVG");
  add_common(plt, f);
  plt->add_option("--input", f.input_path, "trajectories CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_code::ok : exit_code::config;
  }

  try {
    if (sim->parsed()) return cmd_simulate(f);
    if (opt->parsed()) return cmd_optimize(f);
    if (eva->parsed()) return cmd_evaluate(f);
    if (swp->parsed()) return cmd_sweep(f);
    if (plt->parsed()) return cmd_plot(f);
    std::cerr << "error: no command\n";
    return exit_code::config;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const InvalidDistribution& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const std::invalid_argument& e) {
    // Dimension and argument validation failures.
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return exit_code::io;
  } catch (const NoFeasibleSolutionEver& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return exit_code::infeasible;
  } catch (const NotPMatrix& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return exit_code::solver;
  } catch (const NoSolutionFound& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return exit_code::solver;
  } catch (const NotOptimal& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return exit_code::solver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code::io;
  }
}

}  // namespace csteer
