#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csteer/nlp.hpp"
#include "csteer/refinement.hpp"
#include "csteer/rollout.hpp"
#include "csteer/sdlcs.hpp"
#include "csteer/steering.hpp"

namespace csteer {

// Everything one command run needs, assembled from a JSON config file and
// flag overrides. The system is already built and validated.
struct RunConfig {
  std::string system_name = "cartpole";  // cartpole, acrobot or custom
  UncertainLcs system;
  SteeringConfig steering;
  RefinementParams refinement;
  bool refine = true;  // false runs a single fixed-particle solve
  SolverOptions solver;
  std::uint64_t seed = 0;
  int threads = 1;
  int n_particles = 0;  // 0 defers to the command default
  std::string out_dir = "out";
};

// Shipped defaults for a builtin system name. Throws ConfigError for an
// unknown name.
RunConfig default_run_config(const std::string& system_name);

// Parses the documented JSON schema. Unknown keys are rejected so typos do
// not silently fall back to defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

std::string mode_to_string(PolicyMode mode);
PolicyMode mode_from_string(const std::string& s);

void save_policy(const std::string& path, const ControllerPolicy& policy,
                 const Dims& dims);
std::pair<ControllerPolicy, Dims> load_policy(const std::string& path);

// Long-format CSV, one row per (trajectory, step). lambda columns are blank
// on the k = 0 row (the first force is lam_1) and control columns on the
// k = T row. Numbers are shortest round-trip so rereads are lossless.
void write_trajectories_csv(const std::string& path,
                            std::span<const Trajectory> trajectories);
std::vector<Trajectory> read_trajectories_csv(const std::string& path);

// Per-step mean and unbiased variance of every state and force coordinate.
void write_moments_csv(const std::string& path,
                       std::span<const Trajectory> trajectories);

// Per-particle safe-set margin; failed rollouts get margin inf, safe 0.
void write_violations_csv(const std::string& path, const SafetyEstimate& est,
                          const SafeSet& safe);

// What the optimize command reports. `status` is an NlpStatus name or
// "NoFeasibleSolutionEver" when refinement never solved.
struct OptimizeOutcome {
  std::string system_name;
  PolicyMode mode = PolicyMode::OpenLoop;
  double delta_commanded = 0.0;
  std::uint64_t seed = 0;
  std::string status;
  std::optional<double> delta_train;
  std::optional<double> delta_test;
  RefinementLog log;  // empty iteration list for single solves
  double total_time = 0.0;
};

// All wall-time fields live under the "timing" key so determinism checks
// can drop exactly one subtree.
void write_report_json(const std::string& path, const OptimizeOutcome& o);

// Per-iteration table: iter, n_p, status, Delta_train, Delta_test, T_s.
// Delta_test is only filled on the last row; T_s is the one wall-time
// column.
void write_refinement_log_csv(const std::string& path,
                              const RefinementLog& log);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace csteer
