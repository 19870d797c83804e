#pragma once

#include <string>
#include <vector>

#include "egdiff/schedule.hpp"

namespace egdiff {

enum class ScoreModelKind { kIsotropicGaussian, kGaussianMixture, kEmpirical };

/// Analytic provider of the noisy-marginal score. The data distribution is a
/// mixture of isotropic Gaussians (an empirical point cloud is the sigma -> 0
/// case), so under variance-preserving noising the marginal at step t stays a
/// mixture with component k centered at sqrt(abar_t) mu_k and isotropic
/// variance abar_t sigma_k^2 + (1 - abar_t). Everything downstream (score,
/// log density, posterior mean, score Jacobian) is exact.
class ScoreModel {
 public:
  static ScoreModel isotropic_gaussian(Vec mean, double sigma);
  static ScoreModel gaussian_mixture(std::vector<Vec> means,
                                     std::vector<double> sigmas, Vec weights);
  static ScoreModel empirical(std::vector<Vec> points);

  ScoreModelKind kind() const { return kind_; }
  int dim() const { return static_cast<int>(means_[0].size()); }
  int components() const { return static_cast<int>(means_.size()); }
  const std::vector<Vec>& means() const { return means_; }
  const std::vector<double>& sigmas() const { return sigmas_; }
  const Vec& weights() const { return weights_; }
  std::string kind_name() const;

  /// Mixture responsibilities of the noisy marginal at (x, t); sum to 1.
  Vec responsibilities(const Vec& x, int t, const NoiseSchedule& sched) const;

  /// grad_x log p_t(x), exact.
  Vec score(const Vec& x, int t, const NoiseSchedule& sched) const;

  /// log p_t(x) including normalization constants; log-sum-exp stabilized
  /// with the max-shift convention.
  double log_density(const Vec& x, int t, const NoiseSchedule& sched) const;

  /// E[x0 | x_t], responsibility-weighted over per-component posteriors.
  Vec posterior_mean(const Vec& x, int t, const NoiseSchedule& sched) const;

  /// Hessian of log p_t at x (the Jacobian of the score).
  Mat score_jacobian(const Vec& x, int t, const NoiseSchedule& sched) const;

  /// Data distribution quantities (t = 0): density and score of the mixture
  /// itself. Used by oracles; empirical models are rejected (point masses).
  double data_log_density(const Vec& x) const;
  Vec data_score(const Vec& x) const;

  /// Draw one sample from the data distribution.
  Vec sample_data(GaussianStream& rng) const;

 private:
  ScoreModel(ScoreModelKind kind, std::vector<Vec> means,
             std::vector<double> sigmas, Vec weights);

  // Per-component mean / sdev of the marginal at step t.
  void marginal_params(int t, const NoiseSchedule& sched,
                       std::vector<Vec>& centers,
                       std::vector<double>& vars) const;

  ScoreModelKind kind_;
  std::vector<Vec> means_;
  std::vector<double> sigmas_;  // component sdevs; all zero for empirical
  Vec weights_;
};

}  // namespace egdiff
