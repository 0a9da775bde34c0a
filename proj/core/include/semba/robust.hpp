#pragma once

#include <limits>
#include <span>

#include "semba/grid.hpp"

namespace semba {

/// Shape/scale of Barron's general robust loss. alpha = -inf selects the
/// Welsch limit.
struct BarronParams {
  double alpha = 2.0;
  double scale = 1.0;
};

inline constexpr double kAlphaNegInf = -std::numeric_limits<double>::infinity();

/// rho(r; alpha, c). Closed forms at alpha = 2, 0 and -inf; the general branch
/// is evaluated with expm1/log1p so shapes arbitrarily close to 0 or 2 stay
/// accurate.
double barron_rho(double r, const BarronParams& p);

/// d rho / d r.
double barron_drho(double r, const BarronParams& p);

inline constexpr double kBarronWeightFloor = 1e-9;

/// IRLS weight (1 / max(|r|, eps)) * rho'(max(|r|, eps)). Equals rho'(r)/r
/// above the floor and holds its small-residual limit below it.
double barron_weight(double r, const BarronParams& p,
                     double eps = kBarronWeightFloor);

struct RegimeThresholds {
  double theta_s = 0.75;
  double theta_m = 0.35;
  double alpha_dyn = 0.0;

  bool valid() const {
    return 0.0 < theta_m && theta_m < theta_s && theta_s < 1.0 &&
           alpha_dyn <= 0.0;
  }
};

/// Three-regime piecewise-linear map from stability S to Barron shape:
/// 2 above theta_s, 1..2 between theta_m and theta_s, alpha_dyn..1 below.
double shape_map(double stability, const RegimeThresholds& t);

struct StabilityField {
  Grid<double> mean_cs;
  Grid<double> var_cs;
  Grid<double> stability;
  Grid<int> count;  // edges contributing to each pixel
};

/// One per-edge cosine grid; `valid` marks pixels whose projection landed in
/// the other frame. An empty `valid` grid means every pixel is valid.
struct CosineGrid {
  const Grid<double>* cs = nullptr;
  const Grid<unsigned char>* valid = nullptr;
};

/// Per-pixel population mean/variance of cosines clamped to [0, 1] and
/// S = mean (1 - var). Pixels with no valid edge get S = 0 and count 0.
/// Throws kEmptyStack on an empty stack.
StabilityField stability_field(std::span<const CosineGrid> stack);

}  // namespace semba
