#pragma once

#include <stdexcept>
#include <string>

namespace csteer {

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DimensionTooLarge : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Pivoting terminated on a ray or exhausted its budget; the matrix is
// likely not P.
struct NoSolutionFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidDistribution : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotPMatrix : std::runtime_error {
  explicit NotPMatrix(const std::string& what, int step = -1)
      : std::runtime_error(what), step(step) {}
  int step;  // offending time step, -1 when not step-specific
};

struct NonpositiveStiffness : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptyInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptyParticles : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotOptimal : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoFeasibleSolutionEver : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace csteer
