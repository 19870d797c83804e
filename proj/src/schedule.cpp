#include "egdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace egdiff {

NoiseSchedule make_schedule(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("schedule: T must be >= 1");
  NoiseSchedule sched;
  sched.T = static_cast<int>(betas.size());
  sched.betas = std::move(betas);
  sched.alpha_bars.resize(sched.betas.size());
  double prod = 1.0;
  for (size_t i = 0; i < sched.betas.size(); ++i) {
    const double b = sched.betas[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw std::invalid_argument("schedule: beta_" + std::to_string(i + 1) +
                                  " = " + std::to_string(b) +
                                  " outside (0,1)");
    }
    prod *= 1.0 - b;
    sched.alpha_bars[i] = prod;
  }
  for (size_t i = 1; i < sched.alpha_bars.size(); ++i) {
    if (!(sched.alpha_bars[i] < sched.alpha_bars[i - 1])) {
      throw std::invalid_argument(
          "schedule: alpha_bar not strictly decreasing at t = " +
          std::to_string(i + 1));
    }
  }
  return sched;
}

NoiseSchedule make_linear_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument(
        "make_linear_schedule: require 0 < beta_min <= beta_max < 1, got [" +
        std::to_string(beta_min) + ", " + std::to_string(beta_max) + "]");
  }
  std::vector<double> betas(static_cast<size_t>(T));
  if (T == 1) {
    betas[0] = beta_min;
  } else {
    for (int i = 0; i < T; ++i) {
      const double f = static_cast<double>(i) / static_cast<double>(T - 1);
      betas[static_cast<size_t>(i)] = beta_min + f * (beta_max - beta_min);
    }
  }
  return make_schedule(std::move(betas));
}

double schedule_consistency_error(const NoiseSchedule& sched) {
  long double prod = 1.0L;
  double worst = 0.0;
  for (size_t i = 0; i < sched.betas.size(); ++i) {
    prod *= 1.0L - static_cast<long double>(sched.betas[i]);
    const double ref = static_cast<double>(prod);
    const double err =
        std::abs(sched.alpha_bars[i] - ref) / std::max(std::abs(ref), 1e-300);
    worst = std::max(worst, err);
  }
  return worst;
}

Vec forward_noise(const Vec& x0, int t, const NoiseSchedule& sched,
                  GaussianStream& rng) {
  if (t < 1 || t > sched.T) {
    throw std::out_of_range("forward_noise: t = " + std::to_string(t) +
                            " outside 1.." + std::to_string(sched.T));
  }
  const double abar = sched.alpha_bar(t);
  return std::sqrt(abar) * x0 +
         std::sqrt(1.0 - abar) * rng.normal_vec(x0.size());
}

Vec forward_noise(const Vec& x0, int t, const NoiseSchedule& sched,
                  RngSpec spec) {
  GaussianStream rng(spec);
  return forward_noise(x0, t, sched, rng);
}

}  // namespace egdiff
