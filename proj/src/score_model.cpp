#include "egdiff/score_model.hpp"

#include <cmath>
#include <stdexcept>

namespace egdiff {

namespace {

void check_finite(const Vec& x, const char* who) {
  if (!x.allFinite()) {
    throw std::invalid_argument(std::string(who) + ": non-finite input vector");
  }
}

int pick_component(const Vec& weights, GaussianStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(weights.size() - 1);
}

}  // namespace

ScoreModel::ScoreModel(ScoreModelKind kind, std::vector<Vec> means,
                       std::vector<double> sigmas, Vec weights)
    : kind_(kind),
      means_(std::move(means)),
      sigmas_(std::move(sigmas)),
      weights_(std::move(weights)) {
  if (means_.empty()) throw std::invalid_argument("ScoreModel: empty model");
  const Eigen::Index d = means_[0].size();
  if (d < 1) throw std::invalid_argument("ScoreModel: zero-dimensional mean");
  for (const Vec& m : means_) {
    if (m.size() != d)
      throw std::invalid_argument("ScoreModel: inconsistent mean dimensions");
    check_finite(m, "ScoreModel");
  }
  if (sigmas_.size() != means_.size() ||
      weights_.size() != static_cast<Eigen::Index>(means_.size())) {
    throw std::invalid_argument("ScoreModel: component count mismatch");
  }
  for (double s : sigmas_) {
    if (kind_ == ScoreModelKind::kEmpirical) {
      if (s != 0.0)
        throw std::invalid_argument("ScoreModel: empirical sigmas must be 0");
    } else if (!(s > 0.0)) {
      throw std::invalid_argument("ScoreModel: covariance scales must be > 0");
    }
  }
  double sum = 0.0;
  for (Eigen::Index k = 0; k < weights_.size(); ++k) {
    if (!(weights_[k] > 0.0))
      throw std::invalid_argument("ScoreModel: weights must be positive");
    sum += weights_[k];
  }
  weights_ /= sum;
}

ScoreModel ScoreModel::isotropic_gaussian(Vec mean, double sigma) {
  Vec w(1);
  w[0] = 1.0;
  std::vector<Vec> means;
  means.push_back(std::move(mean));
  return ScoreModel(ScoreModelKind::kIsotropicGaussian, std::move(means),
                    {sigma}, std::move(w));
}

ScoreModel ScoreModel::gaussian_mixture(std::vector<Vec> means,
                                        std::vector<double> sigmas,
                                        Vec weights) {
  return ScoreModel(ScoreModelKind::kGaussianMixture, std::move(means),
                    std::move(sigmas), std::move(weights));
}

ScoreModel ScoreModel::empirical(std::vector<Vec> points) {
  if (points.empty())
    throw std::invalid_argument("ScoreModel: empirical model needs >= 1 point");
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Vec w = Vec::Constant(n, 1.0 / static_cast<double>(n));
  std::vector<double> sigmas(points.size(), 0.0);
  return ScoreModel(ScoreModelKind::kEmpirical, std::move(points),
                    std::move(sigmas), std::move(w));
}

std::string ScoreModel::kind_name() const {
  switch (kind_) {
    case ScoreModelKind::kIsotropicGaussian: return "isotropic-gaussian";
    case ScoreModelKind::kGaussianMixture: return "gaussian-mixture";
    case ScoreModelKind::kEmpirical: return "empirical";
  }
  return "?";
}

void ScoreModel::marginal_params(int t, const NoiseSchedule& sched,
                                 std::vector<Vec>& centers,
                                 std::vector<double>& vars) const {
  if (t < 1 || t > sched.T) {
    throw std::out_of_range("ScoreModel: t = " + std::to_string(t) +
                            " outside 1.." + std::to_string(sched.T));
  }
  const double abar = sched.alpha_bar(t);
  const double root = std::sqrt(abar);
  centers.resize(means_.size());
  vars.resize(means_.size());
  for (size_t k = 0; k < means_.size(); ++k) {
    centers[k] = root * means_[k];
    vars[k] = abar * sigmas_[k] * sigmas_[k] + (1.0 - abar);
    if (!(vars[k] > 0.0)) {
      throw std::domain_error("ScoreModel: degenerate marginal variance");
    }
  }
}

Vec ScoreModel::responsibilities(const Vec& x, int t,
                                 const NoiseSchedule& sched) const {
  check_finite(x, "responsibilities");
  std::vector<Vec> centers;
  std::vector<double> vars;
  marginal_params(t, sched, centers, vars);

  const double d = static_cast<double>(dim());
  Vec logits(components());
  for (int k = 0; k < components(); ++k) {
    const double sq = (x - centers[static_cast<size_t>(k)]).squaredNorm();
    logits[k] = std::log(weights_[k]) -
                0.5 * d * std::log(2.0 * M_PI * vars[static_cast<size_t>(k)]) -
                0.5 * sq / vars[static_cast<size_t>(k)];
  }
  const double shift = logits.maxCoeff();
  Vec r = (logits.array() - shift).exp();
  r /= r.sum();
  return r;
}

double ScoreModel::log_density(const Vec& x, int t,
                               const NoiseSchedule& sched) const {
  check_finite(x, "log_density");
  std::vector<Vec> centers;
  std::vector<double> vars;
  marginal_params(t, sched, centers, vars);

  const double d = static_cast<double>(dim());
  double shift = -std::numeric_limits<double>::infinity();
  Vec logits(components());
  for (int k = 0; k < components(); ++k) {
    const double sq = (x - centers[static_cast<size_t>(k)]).squaredNorm();
    logits[k] = std::log(weights_[k]) -
                0.5 * d * std::log(2.0 * M_PI * vars[static_cast<size_t>(k)]) -
                0.5 * sq / vars[static_cast<size_t>(k)];
    shift = std::max(shift, logits[k]);
  }
  return shift + std::log((logits.array() - shift).exp().sum());
}

Vec ScoreModel::score(const Vec& x, int t, const NoiseSchedule& sched) const {
  std::vector<Vec> centers;
  std::vector<double> vars;
  marginal_params(t, sched, centers, vars);
  const Vec r = responsibilities(x, t, sched);

  Vec s = Vec::Zero(x.size());
  for (int k = 0; k < components(); ++k) {
    s += r[k] / vars[static_cast<size_t>(k)] *
         (centers[static_cast<size_t>(k)] - x);
  }
  return s;
}

Vec ScoreModel::posterior_mean(const Vec& x, int t,
                               const NoiseSchedule& sched) const {
  std::vector<Vec> centers;
  std::vector<double> vars;
  marginal_params(t, sched, centers, vars);
  const Vec r = responsibilities(x, t, sched);

  const double abar = sched.alpha_bar(t);
  const double root = std::sqrt(abar);
  Vec m = Vec::Zero(x.size());
  for (int k = 0; k < components(); ++k) {
    const double s2 = sigmas_[static_cast<size_t>(k)] * sigmas_[static_cast<size_t>(k)];
    // E[x0 | x_t, component k] for the conjugate Gaussian pair.
    const double gain = root * s2 / vars[static_cast<size_t>(k)];
    m += r[k] * (means_[static_cast<size_t>(k)] +
                 gain * (x - centers[static_cast<size_t>(k)]));
  }
  return m;
}

Mat ScoreModel::score_jacobian(const Vec& x, int t,
                               const NoiseSchedule& sched) const {
  std::vector<Vec> centers;
  std::vector<double> vars;
  marginal_params(t, sched, centers, vars);
  const Vec r = responsibilities(x, t, sched);

  const Eigen::Index d = x.size();
  Mat h = Mat::Zero(d, d);
  Vec s = Vec::Zero(d);
  for (int k = 0; k < components(); ++k) {
    const double v = vars[static_cast<size_t>(k)];
    const Vec g = (centers[static_cast<size_t>(k)] - x) / v;
    h += r[k] * (g * g.transpose() - Mat::Identity(d, d) / v);
    s += r[k] * g;
  }
  h -= s * s.transpose();
  return h;
}

double ScoreModel::data_log_density(const Vec& x) const {
  if (kind_ == ScoreModelKind::kEmpirical) {
    throw std::domain_error(
        "ScoreModel: data density undefined for empirical point clouds");
  }
  check_finite(x, "data_log_density");
  const double d = static_cast<double>(dim());
  double shift = -std::numeric_limits<double>::infinity();
  Vec logits(components());
  for (int k = 0; k < components(); ++k) {
    const double v = sigmas_[static_cast<size_t>(k)] * sigmas_[static_cast<size_t>(k)];
    const double sq = (x - means_[static_cast<size_t>(k)]).squaredNorm();
    logits[k] = std::log(weights_[k]) - 0.5 * d * std::log(2.0 * M_PI * v) -
                0.5 * sq / v;
    shift = std::max(shift, logits[k]);
  }
  return shift + std::log((logits.array() - shift).exp().sum());
}

Vec ScoreModel::data_score(const Vec& x) const {
  if (kind_ == ScoreModelKind::kEmpirical) {
    throw std::domain_error(
        "ScoreModel: data score undefined for empirical point clouds");
  }
  const double d = static_cast<double>(dim());
  Vec logits(components());
  for (int k = 0; k < components(); ++k) {
    const double v = sigmas_[static_cast<size_t>(k)] * sigmas_[static_cast<size_t>(k)];
    const double sq = (x - means_[static_cast<size_t>(k)]).squaredNorm();
    logits[k] = std::log(weights_[k]) - 0.5 * d * std::log(2.0 * M_PI * v) -
                0.5 * sq / v;
  }
  const double shift = logits.maxCoeff();
  Vec r = (logits.array() - shift).exp();
  r /= r.sum();

  Vec s = Vec::Zero(x.size());
  for (int k = 0; k < components(); ++k) {
    const double v = sigmas_[static_cast<size_t>(k)] * sigmas_[static_cast<size_t>(k)];
    s += r[k] / v * (means_[static_cast<size_t>(k)] - x);
  }
  return s;
}

Vec ScoreModel::sample_data(GaussianStream& rng) const {
  const int k = pick_component(weights_, rng);
  const double sigma = sigmas_[static_cast<size_t>(k)];
  if (sigma == 0.0) return means_[static_cast<size_t>(k)];
  return means_[static_cast<size_t>(k)] + sigma * rng.normal_vec(dim());
}

}  // namespace egdiff
