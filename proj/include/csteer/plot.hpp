#pragma once

#include <span>
#include <string>

#include "csteer/rollout.hpp"

namespace csteer {

struct PlotOptions {
  int width = 900;
  int panel_height = 170;
  std::string title;
};

// One stacked panel per state coordinate, steps on the horizontal axis and
// one polyline per trajectory. Safe-set constraints that bound a single
// coordinate are drawn as short boundary segments at their step. Output
// bytes are a pure function of the inputs. Throws EmptyInput when no
// trajectories are given.
std::string render_state_svg(std::span<const Trajectory> trajectories,
                             const SafeSet& safe, const PlotOptions& opts = {});

}  // namespace csteer
