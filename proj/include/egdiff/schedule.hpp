#pragma once

#include <vector>

#include "egdiff/rng.hpp"

namespace egdiff {

/// Discrete variance-preserving noise ladder: betas[t-1] = beta_t for
/// t = 1..T and alpha_bars[t-1] = prod_{i<=t} (1 - beta_i).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_t, strictly in (0,1)
  std::vector<double> alpha_bars;  // strictly decreasing, in (0,1]

  double beta(int t) const { return betas.at(static_cast<size_t>(t) - 1); }

  /// alpha_bar(0) == 1 by convention (no accumulated noise).
  double alpha_bar(int t) const {
    return t == 0 ? 1.0 : alpha_bars.at(static_cast<size_t>(t) - 1);
  }
};

/// Builds a NoiseSchedule from explicit betas. Validates the (0,1) range and
/// monotonicity of the accumulated products.
NoiseSchedule make_schedule(std::vector<double> betas);

/// betas linearly interpolated from beta_min to beta_max inclusive.
NoiseSchedule make_linear_schedule(int T, double beta_min, double beta_max);

/// Relative mismatch between stored alpha_bars and a long-double
/// reaccumulation of the products. Construction keeps this <= 1e-12.
double schedule_consistency_error(const NoiseSchedule& sched);

/// Forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, eps ~ N(0, I).
Vec forward_noise(const Vec& x0, int t, const NoiseSchedule& sched,
                  GaussianStream& rng);

/// Convenience overload drawing from the stream addressed by `spec`.
Vec forward_noise(const Vec& x0, int t, const NoiseSchedule& sched,
                  RngSpec spec);

}  // namespace egdiff
