#pragma once

#include <optional>
#include <string>
#include <vector>

#include "egdiff/score_model.hpp"

namespace egdiff {

/// Linear degradation y = A x with a precomputed pseudoinverse.
/// Invariant enforced at construction: ||A A+ A - A||_F <= 1e-8 relative.
struct LinearOperator {
  Mat A;
  Mat pinv;

  static LinearOperator from_matrix(Mat a);
};

enum class EnergyKind {
  kL2Target,
  kLinearMeasurement,
  kLowpass,
  kGramStyle,
  kRegionSoftmin,
  kMixtureClass,
};

/// Time-independent distance term D(c, x0): value >= 0, zero exactly when
/// the condition is satisfied, with a closed-form gradient. These analytic
/// terms play the role the usual pretrained feature extractors play for
/// images: a fixed projection into some condition space plus a distance.
class EnergyTerm {
 public:
  /// ||P x - c||^2 for a fixed linear feature map P.
  static EnergyTerm l2_target(Mat projection, Vec target);
  /// Identity projection: ||x - c||^2.
  static EnergyTerm l2_target(Vec target);
  /// ||y - A x||^2 (measurement-residual form).
  static EnergyTerm linear_measurement(LinearOperator op, Vec y);
  /// ||K x_source - K x||^2 with K a block-averaging downsample by `factor`.
  static EnergyTerm lowpass(const Vec& x_source, int factor = 2);
  /// ||G(x) - G(x_ref)||_F^2 with G(x) = (Fx)(Fx)^T / m for a fixed random
  /// feature matrix F (m = 4 d rows, entries N(0,1), seeded).
  static EnergyTerm gram_style(const Vec& x_ref, int dim,
                               std::uint64_t feature_seed);
  /// Squared hinge distance to the ball B(center, radius).
  static EnergyTerm region(Vec center, double radius);
  /// Negative log responsibility of mixture component `index` under the
  /// given data mixture, clamped at 0.
  static EnergyTerm mixture_class(std::vector<Vec> means,
                                  std::vector<double> sigmas, Vec weights,
                                  int index);
  static EnergyTerm mixture_class(const ScoreModel& model, int index);

  EnergyKind kind() const { return kind_; }
  std::string kind_name() const;
  int dim() const { return dim_; }

  double value(const Vec& x0) const;
  Vec grad(const Vec& x0) const;

  // Term payload accessors used by oracles and the CLI.
  const Mat& matrix() const { return mat_; }     // P, A, K, or F
  const Mat& reference() const { return ref_mat_; }  // gram reference
  const Vec& target() const { return vec_; }     // c, y, K x_src, center
  double radius() const { return scalar_; }
  int component_index() const { return index_; }
  const std::optional<LinearOperator>& op() const { return op_; }
  std::uint64_t feature_seed() const { return feature_seed_; }

 private:
  EnergyTerm() = default;

  EnergyKind kind_ = EnergyKind::kL2Target;
  int dim_ = 0;
  Mat mat_;       // projection / measurement / filter / feature matrix
  Mat ref_mat_;   // gram-style reference matrix
  Vec vec_;       // target / y / filtered source / region center
  double scalar_ = 0.0;
  int index_ = -1;
  std::uint64_t feature_seed_ = 0;
  std::optional<LinearOperator> op_;
  // mixture-class payload
  std::vector<Vec> mix_means_;
  std::vector<double> mix_sigmas_;
  Vec mix_weights_;
};

/// Weighted sum of terms: E = sum_i eta_i E_i. Weights are nonnegative and
/// there is at least one term.
class EnergyStack {
 public:
  EnergyStack(std::vector<EnergyTerm> terms, Vec weights);
  explicit EnergyStack(EnergyTerm term);

  const std::vector<EnergyTerm>& terms() const { return terms_; }
  const Vec& weights() const { return weights_; }
  int dim() const { return terms_[0].dim(); }

  double value(const Vec& x0) const;
  Vec grad(const Vec& x0) const;
  /// Per-term unweighted energies, for multi-condition diagnostics.
  Vec term_values(const Vec& x0) const;

 private:
  std::vector<EnergyTerm> terms_;
  Vec weights_;
};

enum class JacobianMode { kAuto, kExact, kStopThroughX0 };

std::string jacobian_mode_name(JacobianMode mode);

/// Resolves kAuto: exact Jacobian for d <= 32, stop-through-x0 above.
JacobianMode resolve_jacobian_mode(JacobianMode mode, int dim);

/// Full gradient of D(c, x0|t(x_t)) with respect to x_t. In exact mode the
/// chain rule uses the closed-form Jacobian of the posterior mean,
/// (I + (1 - abar_t) H) / sqrt(abar_t) with H the Hessian of log p_t; the
/// stop-through-x0 mode treats x0|t as locally constant apart from the
/// 1/sqrt(abar_t) factor.
Vec guided_grad_wrt_xt(const EnergyStack& stack, const ScoreModel& model,
                       const Vec& x_t, int t, const NoiseSchedule& sched,
                       JacobianMode mode = JacobianMode::kAuto);

/// Range-space correction x0 - A+ (A x0 - y); exact data consistency when y
/// lies in the range of A.
Vec ddnm_update(const LinearOperator& op, const Vec& y, const Vec& x0);

}  // namespace egdiff
