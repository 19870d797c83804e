#include <doctest.h>

#include <cmath>

#include "egdiff/score_model.hpp"

using namespace egdiff;

namespace {

const NoiseSchedule& default_sched() {
  static const NoiseSchedule sched = make_linear_schedule(1000, 1e-4, 0.02);
  return sched;
}

ScoreModel random_gmm(GaussianStream& rng, int d, int k) {
  std::vector<Vec> means;
  std::vector<double> sigmas;
  Vec weights(k);
  for (int i = 0; i < k; ++i) {
    means.push_back(2.5 * rng.normal_vec(d));
    sigmas.push_back(0.4 + std::abs(rng.normal()));
    weights[i] = 0.2 + std::abs(rng.normal());
  }
  return ScoreModel::gaussian_mixture(std::move(means), std::move(sigmas), weights);
}

// Independent oracle: direct mixture summation in long double, no log-sum-exp.
long double brute_force_log_density(const ScoreModel& model, const Vec& x,
                                    int t, const NoiseSchedule& sched) {
  const long double abar = sched.alpha_bar(t);
  long double total = 0.0L;
  for (int k = 0; k < model.components(); ++k) {
    const long double s2 =
        abar * model.sigmas()[static_cast<size_t>(k)] * model.sigmas()[static_cast<size_t>(k)] +
        (1.0L - abar);
    long double sq = 0.0L;
    for (int a = 0; a < model.dim(); ++a) {
      const long double diff =
          x[a] - std::sqrt(static_cast<double>(abar)) * model.means()[static_cast<size_t>(k)][a];
      sq += diff * diff;
    }
    const long double norm =
        std::pow(2.0L * static_cast<long double>(M_PI) * s2,
                 -0.5L * model.dim());
    total += static_cast<long double>(model.weights()[k]) * norm *
             std::exp(-0.5L * sq / s2);
  }
  return std::log(total);
}

}  // namespace

TEST_CASE("standard gaussian score at full signal") {
  // Schedule whose single beta underflows: alpha_bar == 1 exactly.
  const NoiseSchedule sched = make_schedule({1e-300});
  Vec mu(2);
  mu << 0.3, -1.1;
  const ScoreModel model = ScoreModel::isotropic_gaussian(mu, 1.0);
  Vec x(2);
  x << 1.0, 2.0;
  const Vec s = model.score(x, 1, sched);
  CHECK((s - (mu - x)).norm() <= 1e-14);
}

TEST_CASE("single-point empirical score") {
  const NoiseSchedule& sched = default_sched();
  Vec p(2);
  p << 1.0, -0.5;
  const ScoreModel model = ScoreModel::empirical({p});
  const int t = 350;
  const double abar = sched.alpha_bar(t);
  Vec x(2);
  x << 0.2, 0.4;
  const Vec s = model.score(x, t, sched);
  const Vec expected = -(x - std::sqrt(abar) * p) / (1.0 - abar);
  CHECK((s - expected).norm() <= 1e-12 * expected.norm());
}

TEST_CASE("gmm score equals finite differences of the exact log density") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{21, 0});
  std::vector<Vec> means;
  means.push_back((Vec(2) << -1.5, 0.5).finished());
  means.push_back((Vec(2) << 1.0, -1.0).finished());
  Vec w(2);
  w << 0.4, 0.6;
  const ScoreModel model = ScoreModel::gaussian_mixture(means, {0.8, 0.5}, w);
  const int t = 500;
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = 2.0 * rng.normal_vec(2);
    const Vec s = model.score(x, t, sched);
    Vec fd(2);
    for (int a = 0; a < 2; ++a) {
      Vec hi = x, lo = x;
      hi[a] += h;
      lo[a] -= h;
      fd[a] = (model.log_density(hi, t, sched) - model.log_density(lo, t, sched)) /
              (2.0 * h);
    }
    CHECK((fd - s).norm() / (s.norm() + 1e-12) <= 1e-6);
  }
}

TEST_CASE("log density of a standard gaussian at the origin") {
  const NoiseSchedule sched = make_schedule({1e-300});
  const int d = 3;
  const ScoreModel model = ScoreModel::isotropic_gaussian(Vec::Zero(d), 1.0);
  const double ld = model.log_density(Vec::Zero(d), 1, sched);
  CHECK(ld == doctest::Approx(-0.5 * d * std::log(2.0 * M_PI)).epsilon(1e-14));
}

TEST_CASE("equidistant two-point empirical log density equals one kernel") {
  const NoiseSchedule& sched = default_sched();
  Vec p1(2), p2(2);
  p1 << 1.0, 0.0;
  p2 << -1.0, 0.0;
  const ScoreModel model = ScoreModel::empirical({p1, p2});
  const int t = 300;
  Vec x(2);
  x << 0.0, 0.7;  // equidistant from both noised points
  const double abar = sched.alpha_bar(t);
  const double v = 1.0 - abar;
  const double sq = (x - std::sqrt(abar) * p1).squaredNorm();
  const double log_kernel = -std::log(2.0 * M_PI * v) - 0.5 * sq / v;
  CHECK(model.log_density(x, t, sched) ==
        doctest::Approx(log_kernel).epsilon(1e-12));
}

TEST_CASE("log density matches brute-force summation") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{99, 0});
  for (int trial = 0; trial < 25; ++trial) {
    const ScoreModel model = random_gmm(rng, 2, 3);
    const Vec x = 3.0 * rng.normal_vec(2);
    const int t = 1 + static_cast<int>(rng.raw() % 1000);
    const double expected =
        static_cast<double>(brute_force_log_density(model, x, t, sched));
    CHECK(model.log_density(x, t, sched) ==
          doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("posterior mean of a single-point model returns the point") {
  const NoiseSchedule& sched = default_sched();
  Vec p(3);
  p << 0.4, -1.0, 2.0;
  const ScoreModel model = ScoreModel::empirical({p});
  GaussianStream rng(RngSpec{5, 0});
  for (int t : {1, 250, 999}) {
    const Vec x = rng.normal_vec(3);
    CHECK((model.posterior_mean(x, t, sched) - p).norm() <= 1e-12);
  }
}

TEST_CASE("posterior mean near zero noise returns x") {
  // alpha_bar = 1 - 1e-9 after one step.
  const NoiseSchedule sched = make_schedule({1e-9});
  std::vector<Vec> means{(Vec(2) << 0.0, 0.0).finished(),
                         (Vec(2) << 0.3, -0.2).finished()};
  Vec w(2);
  w << 0.5, 0.5;
  const ScoreModel model = ScoreModel::gaussian_mixture(means, {0.8, 0.6}, w);
  Vec x(2);
  x << 0.29, -0.21;
  CHECK((model.posterior_mean(x, 1, sched) - x).norm() <= 1e-6);
}

TEST_CASE("tweedie identity holds to 1e-10") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{2024, 0});
  for (int trial = 0; trial < 200; ++trial) {
    const int kind = static_cast<int>(rng.raw() % 3);
    const int d = 1 + static_cast<int>(rng.raw() % 3);
    ScoreModel model = [&]() {
      if (kind == 0) {
        return ScoreModel::isotropic_gaussian(rng.normal_vec(d),
                                              0.5 + std::abs(rng.normal()));
      }
      if (kind == 1) return random_gmm(rng, d, 1 + static_cast<int>(rng.raw() % 4));
      std::vector<Vec> pts;
      const int n = 1 + static_cast<int>(rng.raw() % 6);
      for (int i = 0; i < n; ++i) pts.push_back(2.0 * rng.normal_vec(d));
      return ScoreModel::empirical(std::move(pts));
    }();
    const int t = 1 + static_cast<int>(rng.raw() % 1000);
    const Vec x = 2.0 * rng.normal_vec(d);
    const double abar = sched.alpha_bar(t);
    const Vec via_score =
        (x + (1.0 - abar) * model.score(x, t, sched)) / std::sqrt(abar);
    const Vec direct = model.posterior_mean(x, t, sched);
    CHECK((via_score - direct).norm() <= 1e-10 * (1.0 + direct.norm()));
  }
}

TEST_CASE("responsibilities sum to one") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{31, 0});
  std::vector<Vec> pts;
  for (int i = 0; i < 50; ++i) pts.push_back(3.0 * rng.normal_vec(2));
  const ScoreModel model = ScoreModel::empirical(std::move(pts));
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = 4.0 * rng.normal_vec(2);
    const int t = 1 + static_cast<int>(rng.raw() % 1000);
    CHECK(model.responsibilities(x, t, sched).sum() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("empirical models stay stable with many points") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{77, 0});
  std::vector<Vec> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back(rng.normal_vec(2));
  const ScoreModel model = ScoreModel::empirical(std::move(pts));
  const Vec x = 50.0 * Vec::Ones(2);  // far tail, still finite
  const double ld = model.log_density(x, 500, sched);
  CHECK(std::isfinite(ld));
  CHECK(model.score(x, 500, sched).allFinite());
}

TEST_CASE("score jacobian matches finite differences of the score") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{404, 0});
  const ScoreModel model = random_gmm(rng, 2, 3);
  const int t = 420;
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    const Vec x = 2.0 * rng.normal_vec(2);
    const Mat jac = model.score_jacobian(x, t, sched);
    for (int a = 0; a < 2; ++a) {
      Vec hi = x, lo = x;
      hi[a] += h;
      lo[a] -= h;
      const Vec col =
          (model.score(hi, t, sched) - model.score(lo, t, sched)) / (2.0 * h);
      CHECK((jac.col(a) - col).norm() <= 1e-5 * (1.0 + col.norm()));
    }
  }
}

TEST_CASE("model validation errors") {
  CHECK_THROWS_AS(ScoreModel::empirical({}), std::invalid_argument);
  CHECK_THROWS_AS(
      ScoreModel::isotropic_gaussian((Vec(1) << 0.0).finished(), 0.0),
      std::invalid_argument);
  Vec w(2);
  w << 0.5, -0.5;
  CHECK_THROWS_AS(ScoreModel::gaussian_mixture(
                      {(Vec(1) << 0.0).finished(), (Vec(1) << 1.0).finished()},
                      {1.0, 1.0}, w),
                  std::invalid_argument);
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model =
      ScoreModel::isotropic_gaussian((Vec(2) << 0.0, 0.0).finished(), 1.0);
  Vec bad(2);
  bad << std::numeric_limits<double>::quiet_NaN(), 0.0;
  CHECK_THROWS_AS(model.score(bad, 10, sched), std::invalid_argument);
}
