#pragma once

#include "semba/geometry.hpp"
#include "semba/grid.hpp"

namespace semba {

using FlowField = Grid<Vec2>;

/// Dense flow from frame i to frame j with per-pixel confidence in [0, 1].
struct FlowObservation {
  FlowField flow;
  Grid<double> confidence;
};

}  // namespace semba
