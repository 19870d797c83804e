#include "egdiff/energy.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace egdiff {

namespace {

void check_dim(const Vec& x, int dim, const char* who) {
  if (static_cast<int>(x.size()) != dim) {
    throw std::invalid_argument(std::string(who) + ": dimension mismatch, got " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(dim));
  }
  if (!x.allFinite()) {
    throw std::invalid_argument(std::string(who) + ": non-finite input");
  }
}

Vec mixture_logits(const std::vector<Vec>& means,
                   const std::vector<double>& sigmas, const Vec& weights,
                   const Vec& x) {
  const double d = static_cast<double>(x.size());
  Vec logits(weights.size());
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    const double v = sigmas[static_cast<size_t>(k)] * sigmas[static_cast<size_t>(k)];
    logits[k] = std::log(weights[k]) - 0.5 * d * std::log(2.0 * M_PI * v) -
                0.5 * (x - means[static_cast<size_t>(k)]).squaredNorm() / v;
  }
  return logits;
}

}  // namespace

LinearOperator LinearOperator::from_matrix(Mat a) {
  if (a.size() == 0) throw std::invalid_argument("LinearOperator: empty matrix");
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double tol = 1e-12 * svd.singularValues()(0) *
                     static_cast<double>(std::max(a.rows(), a.cols()));
  Vec inv_sv = svd.singularValues();
  for (Eigen::Index i = 0; i < inv_sv.size(); ++i) {
    inv_sv[i] = inv_sv[i] > tol ? 1.0 / inv_sv[i] : 0.0;
  }
  LinearOperator op;
  op.pinv = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  op.A = std::move(a);

  const double rel = (op.A * op.pinv * op.A - op.A).norm() /
                     std::max(op.A.norm(), 1e-300);
  if (rel > 1e-8) {
    throw std::runtime_error("LinearOperator: A A+ A != A, relative error " +
                             std::to_string(rel));
  }
  return op;
}

EnergyTerm EnergyTerm::l2_target(Mat projection, Vec target) {
  if (projection.rows() != target.size()) {
    throw std::invalid_argument("l2_target: projection rows != target size");
  }
  EnergyTerm term;
  term.kind_ = EnergyKind::kL2Target;
  term.dim_ = static_cast<int>(projection.cols());
  term.mat_ = std::move(projection);
  term.vec_ = std::move(target);
  return term;
}

EnergyTerm EnergyTerm::l2_target(Vec target) {
  Mat p = Mat::Identity(target.size(), target.size());
  return l2_target(std::move(p), std::move(target));
}

EnergyTerm EnergyTerm::linear_measurement(LinearOperator op, Vec y) {
  if (op.A.rows() != y.size()) {
    throw std::invalid_argument("linear_measurement: A rows != y size");
  }
  EnergyTerm term;
  term.kind_ = EnergyKind::kLinearMeasurement;
  term.dim_ = static_cast<int>(op.A.cols());
  term.mat_ = op.A;
  term.vec_ = std::move(y);
  term.op_ = std::move(op);
  return term;
}

EnergyTerm EnergyTerm::lowpass(const Vec& x_source, int factor) {
  const int d = static_cast<int>(x_source.size());
  if (factor < 1 || d % factor != 0) {
    throw std::invalid_argument(
        "lowpass: dimension must be divisible by the downsampling factor");
  }
  const int m = d / factor;
  Mat k = Mat::Zero(m, d);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < factor; ++j) {
      k(i, i * factor + j) = 1.0 / static_cast<double>(factor);
    }
  }
  EnergyTerm term;
  term.kind_ = EnergyKind::kLowpass;
  term.dim_ = d;
  term.vec_ = k * x_source;
  term.mat_ = std::move(k);
  return term;
}

EnergyTerm EnergyTerm::gram_style(const Vec& x_ref, int dim,
                                  std::uint64_t feature_seed) {
  if (x_ref.size() != dim) {
    throw std::invalid_argument("gram_style: reference dimension mismatch");
  }
  const int m = 4 * dim;
  GaussianStream rng(RngSpec{feature_seed, 0});
  Mat f(m, dim);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < dim; ++j) f(i, j) = rng.normal();
  }
  EnergyTerm term;
  term.kind_ = EnergyKind::kGramStyle;
  term.dim_ = dim;
  term.feature_seed_ = feature_seed;
  const Vec u = f * x_ref;
  term.ref_mat_ = u * u.transpose() / static_cast<double>(m);
  term.mat_ = std::move(f);
  return term;
}

EnergyTerm EnergyTerm::region(Vec center, double radius) {
  if (!(radius >= 0.0)) throw std::invalid_argument("region: radius < 0");
  EnergyTerm term;
  term.kind_ = EnergyKind::kRegionSoftmin;
  term.dim_ = static_cast<int>(center.size());
  term.vec_ = std::move(center);
  term.scalar_ = radius;
  return term;
}

EnergyTerm EnergyTerm::mixture_class(std::vector<Vec> means,
                                     std::vector<double> sigmas, Vec weights,
                                     int index) {
  if (means.empty() || sigmas.size() != means.size() ||
      weights.size() != static_cast<Eigen::Index>(means.size())) {
    throw std::invalid_argument("mixture_class: inconsistent mixture spec");
  }
  if (index < 0 || index >= static_cast<int>(means.size())) {
    throw std::invalid_argument("mixture_class: component index out of range");
  }
  for (double s : sigmas) {
    if (!(s > 0.0))
      throw std::invalid_argument("mixture_class: sigmas must be > 0");
  }
  EnergyTerm term;
  term.kind_ = EnergyKind::kMixtureClass;
  term.dim_ = static_cast<int>(means[0].size());
  term.index_ = index;
  term.mix_means_ = std::move(means);
  term.mix_sigmas_ = std::move(sigmas);
  term.mix_weights_ = weights / weights.sum();
  return term;
}

EnergyTerm EnergyTerm::mixture_class(const ScoreModel& model, int index) {
  return mixture_class(model.means(), model.sigmas(), model.weights(), index);
}

std::string EnergyTerm::kind_name() const {
  switch (kind_) {
    case EnergyKind::kL2Target: return "l2-target";
    case EnergyKind::kLinearMeasurement: return "linear-measurement";
    case EnergyKind::kLowpass: return "lowpass";
    case EnergyKind::kGramStyle: return "gram-style";
    case EnergyKind::kRegionSoftmin: return "region-softmin";
    case EnergyKind::kMixtureClass: return "mixture-class";
  }
  return "?";
}

double EnergyTerm::value(const Vec& x0) const {
  check_dim(x0, dim_, "energy");
  switch (kind_) {
    case EnergyKind::kL2Target:
      return (mat_ * x0 - vec_).squaredNorm();
    case EnergyKind::kLinearMeasurement:
      return (vec_ - mat_ * x0).squaredNorm();
    case EnergyKind::kLowpass:
      return (vec_ - mat_ * x0).squaredNorm();
    case EnergyKind::kGramStyle: {
      const Vec u = mat_ * x0;
      const Mat g = u * u.transpose() / static_cast<double>(mat_.rows());
      return (g - ref_mat_).squaredNorm();
    }
    case EnergyKind::kRegionSoftmin: {
      const double excess = (x0 - vec_).norm() - scalar_;
      return excess > 0.0 ? excess * excess : 0.0;
    }
    case EnergyKind::kMixtureClass: {
      const Vec logits = mixture_logits(mix_means_, mix_sigmas_, mix_weights_, x0);
      const double shift = logits.maxCoeff();
      const double lse = shift + std::log((logits.array() - shift).exp().sum());
      return std::max(0.0, lse - logits[index_]);  // -log r_k, clamped
    }
  }
  throw std::logic_error("energy: unknown kind");
}

Vec EnergyTerm::grad(const Vec& x0) const {
  check_dim(x0, dim_, "energy_grad");
  switch (kind_) {
    case EnergyKind::kL2Target:
      return 2.0 * mat_.transpose() * (mat_ * x0 - vec_);
    case EnergyKind::kLinearMeasurement:
      return 2.0 * mat_.transpose() * (mat_ * x0 - vec_);
    case EnergyKind::kLowpass:
      return 2.0 * mat_.transpose() * (mat_ * x0 - vec_);
    case EnergyKind::kGramStyle: {
      const double m = static_cast<double>(mat_.rows());
      const Vec u = mat_ * x0;
      const Mat diff = u * u.transpose() / m - ref_mat_;
      return 4.0 / m * mat_.transpose() * (diff * u);
    }
    case EnergyKind::kRegionSoftmin: {
      const Vec delta = x0 - vec_;
      const double dist = delta.norm();
      const double excess = dist - scalar_;
      if (excess <= 0.0 || dist == 0.0) return Vec::Zero(dim_);
      return 2.0 * excess / dist * delta;
    }
    case EnergyKind::kMixtureClass: {
      const Vec logits = mixture_logits(mix_means_, mix_sigmas_, mix_weights_, x0);
      const double shift = logits.maxCoeff();
      Vec r = (logits.array() - shift).exp();
      r /= r.sum();
      // grad(-log r_k) = sum_j r_j grad a_j - grad a_k
      Vec g = Vec::Zero(dim_);
      for (Eigen::Index j = 0; j < r.size(); ++j) {
        const double v = mix_sigmas_[static_cast<size_t>(j)] *
                         mix_sigmas_[static_cast<size_t>(j)];
        const Vec gj = (mix_means_[static_cast<size_t>(j)] - x0) / v;
        g += r[j] * gj;
        if (static_cast<int>(j) == index_) g -= gj;
      }
      return g;
    }
  }
  throw std::logic_error("energy_grad: unknown kind");
}

EnergyStack::EnergyStack(std::vector<EnergyTerm> terms, Vec weights)
    : terms_(std::move(terms)), weights_(std::move(weights)) {
  if (terms_.empty()) throw std::invalid_argument("EnergyStack: empty stack");
  if (weights_.size() != static_cast<Eigen::Index>(terms_.size())) {
    throw std::invalid_argument("EnergyStack: weight count mismatch");
  }
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i] >= 0.0))
      throw std::invalid_argument("EnergyStack: weights must be >= 0");
  }
  for (const EnergyTerm& t : terms_) {
    if (t.dim() != terms_[0].dim()) {
      throw std::invalid_argument("EnergyStack: term dimensions disagree");
    }
  }
}

EnergyStack::EnergyStack(EnergyTerm term)
    : EnergyStack(std::vector<EnergyTerm>{std::move(term)}, Vec::Ones(1)) {}

double EnergyStack::value(const Vec& x0) const {
  double e = 0.0;
  for (size_t i = 0; i < terms_.size(); ++i) {
    e += weights_[static_cast<Eigen::Index>(i)] * terms_[i].value(x0);
  }
  return e;
}

Vec EnergyStack::grad(const Vec& x0) const {
  Vec g = Vec::Zero(x0.size());
  for (size_t i = 0; i < terms_.size(); ++i) {
    g += weights_[static_cast<Eigen::Index>(i)] * terms_[i].grad(x0);
  }
  return g;
}

Vec EnergyStack::term_values(const Vec& x0) const {
  Vec v(static_cast<Eigen::Index>(terms_.size()));
  for (size_t i = 0; i < terms_.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = terms_[i].value(x0);
  }
  return v;
}

std::string jacobian_mode_name(JacobianMode mode) {
  switch (mode) {
    case JacobianMode::kAuto: return "auto";
    case JacobianMode::kExact: return "exact";
    case JacobianMode::kStopThroughX0: return "stop-through-x0";
  }
  return "?";
}

JacobianMode resolve_jacobian_mode(JacobianMode mode, int dim) {
  if (mode != JacobianMode::kAuto) return mode;
  return dim <= 32 ? JacobianMode::kExact : JacobianMode::kStopThroughX0;
}

Vec guided_grad_wrt_xt(const EnergyStack& stack, const ScoreModel& model,
                       const Vec& x_t, int t, const NoiseSchedule& sched,
                       JacobianMode mode) {
  const Vec x0 = model.posterior_mean(x_t, t, sched);
  const Vec g = stack.grad(x0);
  const double abar = sched.alpha_bar(t);
  const double root = std::sqrt(abar);
  switch (resolve_jacobian_mode(mode, static_cast<int>(x_t.size()))) {
    case JacobianMode::kStopThroughX0:
      return g / root;
    case JacobianMode::kExact: {
      const Mat h = model.score_jacobian(x_t, t, sched);
      const Eigen::Index d = x_t.size();
      const Mat jac = (Mat::Identity(d, d) + (1.0 - abar) * h) / root;
      return jac.transpose() * g;
    }
    case JacobianMode::kAuto: break;
  }
  throw std::logic_error("guided_grad_wrt_xt: unresolved jacobian mode");
}

Vec ddnm_update(const LinearOperator& op, const Vec& y, const Vec& x0) {
  if (op.A.cols() != x0.size() || op.A.rows() != y.size()) {
    throw std::invalid_argument("ddnm_update: dimension mismatch");
  }
  return x0 - op.pinv * (op.A * x0 - y);
}

}  // namespace egdiff
