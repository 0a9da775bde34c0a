#include "semba/robust.hpp"

#include <algorithm>
#include <cmath>

#include "semba/errors.hpp"

namespace semba {

double barron_rho(double r, const BarronParams& p) {
  const double x = r / p.scale;
  const double x2 = x * x;
  const double alpha = p.alpha;
  if (alpha == 2.0) return 0.5 * x2;
  if (alpha == 0.0) return std::log1p(0.5 * x2);
  if (std::isinf(alpha) && alpha < 0.0) return -std::expm1(-0.5 * x2);
  const double b = std::abs(alpha - 2.0);
  return (b / alpha) * std::expm1(0.5 * alpha * std::log1p(x2 / b));
}

double barron_drho(double r, const BarronParams& p) {
  const double x = r / p.scale;
  const double x2 = x * x;
  const double alpha = p.alpha;
  const double lead = x / p.scale;
  if (alpha == 2.0) return lead;
  if (alpha == 0.0) return lead / (1.0 + 0.5 * x2);
  if (std::isinf(alpha) && alpha < 0.0) return lead * std::exp(-0.5 * x2);
  const double b = std::abs(alpha - 2.0);
  return lead * std::exp((0.5 * alpha - 1.0) * std::log1p(x2 / b));
}

double barron_weight(double r, const BarronParams& p, double eps) {
  const double a = std::max(std::abs(r), eps);
  return std::max(0.0, barron_drho(a, p) / a);
}

double shape_map(double stability, const RegimeThresholds& t) {
  const double s = std::clamp(stability, 0.0, 1.0);
  if (s >= t.theta_s) return 2.0;
  if (s >= t.theta_m) return 1.0 + (s - t.theta_m) / (t.theta_s - t.theta_m);
  return t.alpha_dyn + (s / t.theta_m) * (1.0 - t.alpha_dyn);
}

StabilityField stability_field(std::span<const CosineGrid> stack) {
  if (stack.empty()) throw Error(ErrorCode::kEmptyStack, "no cosine grids");
  const int W = stack.front().cs->width();
  const int H = stack.front().cs->height();
  for (const auto& g : stack) {
    if (!g.cs->same_shape(W, H) ||
        (g.valid != nullptr && !g.valid->empty() && !g.valid->same_shape(W, H))) {
      throw Error(ErrorCode::kDimensionMismatch, "cosine grid shape mismatch");
    }
  }

  StabilityField f{Grid<double>(W, H, 0.0), Grid<double>(W, H, 0.0),
                   Grid<double>(W, H, 0.0), Grid<int>(W, H, 0)};
  const std::size_t n = f.stability.size();
  auto included = [](const CosineGrid& g, std::size_t i) {
    return g.valid == nullptr || g.valid->empty() || (*g.valid)[i] != 0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    int count = 0;
    double sum = 0.0;
    for (const auto& g : stack) {
      if (!included(g, i)) continue;
      sum += std::clamp((*g.cs)[i], 0.0, 1.0);
      ++count;
    }
    if (count == 0) continue;
    const double mean = sum / count;
    double var = 0.0;
    for (const auto& g : stack) {
      if (!included(g, i)) continue;
      const double d = std::clamp((*g.cs)[i], 0.0, 1.0) - mean;
      var += d * d;
    }
    var /= count;
    f.mean_cs[i] = mean;
    f.var_cs[i] = var;
    f.stability[i] = std::clamp(mean * (1.0 - var), 0.0, 1.0);
    f.count[i] = count;
  }
  return f;
}

}  // namespace semba
