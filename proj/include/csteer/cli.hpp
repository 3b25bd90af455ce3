#pragma once

namespace csteer {

// Exit codes: every command returns ok on success and a category code
// otherwise, so scripts can tell a bad config from an unlucky solve.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int io = 1;          // missing or unwritable files
inline constexpr int config = 2;      // flag, schema or validation errors
inline constexpr int solver = 3;      // solve failed for numerical reasons
inline constexpr int infeasible = 4;  // problem proved or presumed infeasible
}  // namespace exit_code

// The contact-steer entry point. Never throws; errors are printed to stderr
// and mapped to the exit codes above. The CONTACT_STEER_LOG environment
// variable sets stderr verbosity (0 silent, 1 progress, 2 adds a solver
// iteration log next to the outputs).
int run_cli(int argc, const char* const* argv);

}  // namespace csteer
