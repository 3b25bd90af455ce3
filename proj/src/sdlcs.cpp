#include "csteer/sdlcs.hpp"

#include <string>

#include "csteer/lcp.hpp"

namespace csteer {

namespace {

// Stream ids for the per-particle channels.
constexpr std::uint64_t kChannelParameters = 1;
constexpr std::uint64_t kChannelInitialState = 2;
constexpr std::uint64_t kChannelProcessNoise = 3;
constexpr std::uint64_t kChannelComplementarityNoise = 4;

void check_dims(const Dims& d) {
  if (d.n_x < 1 || d.n_u < 0 || d.n_c < 0)
    throw DimensionMismatch("dims must satisfy n_x >= 1, n_u >= 0, n_c >= 0");
  if (d.horizon < 1) throw DimensionMismatch("horizon must be >= 1");
  if (!(d.dt > 0.0)) throw DimensionMismatch("dt must be positive");
}

}  // namespace

void StageMatrices::validate(const Dims& dims) const {
  auto want = [](const Eigen::MatrixXd& m, int r, int c, const char* name) {
    if (m.rows() != r || m.cols() != c)
      throw DimensionMismatch(std::string("stage matrix ") + name +
                              " has inconsistent dimensions");
  };
  want(A, dims.n_x, dims.n_x, "A");
  want(B, dims.n_x, dims.n_u, "B");
  want(C, dims.n_x, dims.n_c, "C");
  want(D, dims.n_c, dims.n_x, "D");
  want(E, dims.n_c, dims.n_u, "E");
  want(F, dims.n_c, dims.n_c, "F");
  if (g.size() != dims.n_x) throw DimensionMismatch("stage vector g size");
  if (h.size() != dims.n_c) throw DimensionMismatch("stage vector h size");
}

void UncertainLcs::validate() const {
  check_dims(dims);
  if (!stage_builder) throw DimensionMismatch("stage_builder must be set");
  if (static_cast<int>(process_noise_specs.size()) != dims.n_x)
    throw DimensionMismatch("process_noise_specs must have n_x entries");
  if (static_cast<int>(complementarity_noise_specs.size()) != dims.n_c)
    throw DimensionMismatch(
        "complementarity_noise_specs must have n_c entries");
  if (static_cast<int>(initial_state_specs.size()) != dims.n_x)
    throw DimensionMismatch("initial_state_specs must have n_x entries");
  for (const auto& [name, spec] : parameter_specs) spec.validate();
  for (const auto& spec : process_noise_specs) spec.validate();
  for (const auto& spec : complementarity_noise_specs) spec.validate();
  for (const auto& spec : initial_state_specs) spec.validate();
}

Particle sample_particle(const UncertainLcs& sys, std::uint64_t seed,
                         int index) {
  sys.validate();
  if (index < 0) throw DimensionMismatch("particle index must be >= 0");

  const Dims& d = sys.dims;
  CounterRng stream =
      CounterRng(seed).fork(static_cast<std::uint64_t>(index));

  Particle p;
  p.index = index;

  // parameter_specs is an ordered map, so draw counters are stable.
  CounterRng params = stream.fork(kChannelParameters);
  std::uint64_t counter = 0;
  for (const auto& [name, spec] : sys.parameter_specs)
    p.xi[name] = spec.sample(params.uniform01(counter++));

  CounterRng init = stream.fork(kChannelInitialState);
  p.x0.resize(d.n_x);
  for (int i = 0; i < d.n_x; ++i)
    p.x0(i) = sys.initial_state_specs[i].sample(init.uniform01(i));

  CounterRng ws = stream.fork(kChannelProcessNoise);
  p.w.resize(d.horizon, d.n_x);
  for (int k = 0; k < d.horizon; ++k)
    for (int i = 0; i < d.n_x; ++i)
      p.w(k, i) = sys.process_noise_specs[i].sample(
          ws.uniform01(static_cast<std::uint64_t>(k) * d.n_x + i));

  CounterRng ls = stream.fork(kChannelComplementarityNoise);
  p.l.resize(d.horizon, d.n_c);
  for (int k = 0; k < d.horizon; ++k)
    for (int i = 0; i < d.n_c; ++i)
      p.l(k, i) = sys.complementarity_noise_specs[i].sample(
          ls.uniform01(static_cast<std::uint64_t>(k) * d.n_c + i));

  return p;
}

std::vector<StageMatrices> realize_stages(const UncertainLcs& sys,
                                          const ParameterMap& xi) {
  sys.validate();
  for (const auto& [name, spec] : sys.parameter_specs)
    if (!xi.count(name))
      throw DimensionMismatch("xi is missing parameter '" + name + "'");

  std::vector<StageMatrices> stages;
  stages.reserve(sys.dims.horizon);
  for (int k = 0; k < sys.dims.horizon; ++k) {
    StageMatrices m = sys.stage_builder(k, xi);
    m.validate(sys.dims);
    if (sys.dims.n_c > 0 && sys.dims.n_c <= 16 && !is_p_matrix(m.F))
      throw NotPMatrix("F is not a P-matrix at step " + std::to_string(k), k);
    stages.push_back(std::move(m));
  }
  return stages;
}

}  // namespace csteer
