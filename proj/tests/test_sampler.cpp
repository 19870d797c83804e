#include <doctest.h>

#include <cmath>

#include "egdiff/sampler.hpp"
#include "egdiff/stats.hpp"

using namespace egdiff;

namespace {

const NoiseSchedule& default_sched() {
  static const NoiseSchedule sched = make_linear_schedule(1000, 1e-4, 0.02);
  return sched;
}

ScoreModel std_gaussian(int d) {
  return ScoreModel::isotropic_gaussian(Vec::Zero(d), 1.0);
}

}  // namespace

TEST_CASE("degenerate ancestral step is the identity") {
  // beta underflows against 1.0 and the score vanishes at x = mu.
  const NoiseSchedule sched = make_schedule({1e-300});
  Vec mu(2);
  mu << 0.75, -1.5;
  const ScoreModel model = ScoreModel::isotropic_gaussian(mu, 1.0);
  GaussianStream stream(RngSpec{3, 1});
  const Vec out = ancestral_step(model, mu, 1, sched, stream);
  CHECK(out == mu);
}

TEST_CASE("ancestral step at t=1 is deterministic") {
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model = std_gaussian(2);
  Vec x(2);
  x << 0.4, -0.9;
  GaussianStream a(RngSpec{1, 1});
  GaussianStream b(RngSpec{999, 1});
  const Vec out_a = ancestral_step(model, x, 1, sched, a);
  const Vec out_b = ancestral_step(model, x, 1, sched, b);
  CHECK(out_a == out_b);  // no noise is consumed at t = 1
  CHECK_THROWS_AS(ancestral_step(model, x, 0, sched, a), std::out_of_range);
  CHECK_THROWS_AS(ancestral_step(model, x, 1001, sched, a), std::out_of_range);
}

TEST_CASE("unconditional runs land on the stationary gaussian") {
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model = std_gaussian(2);
  GuidanceConfig cfg;
  cfg.record_trace = false;
  const int n = 2000;
  SampleSet out(n, 2);
  for (int i = 0; i < n; ++i) {
    out.row(i) = sample_guided(model, nullptr, cfg, sched, 100 + i).x0.transpose();
  }
  const Vec mean = sample_mean(out);
  const Mat cov = sample_cov(out);
  const double mean_tol = 4.0 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean[0]) <= mean_tol);
  CHECK(std::abs(mean[1]) <= mean_tol);
  CHECK(std::abs(cov(0, 0) - 1.0) <= 6.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(cov(1, 1) - 1.0) <= 6.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(cov(0, 1)) <= 6.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("estimate_x0 with no accumulated noise returns x") {
  const NoiseSchedule sched = make_schedule({1e-300});
  const ScoreModel model = std_gaussian(2);
  Vec x(2);
  x << 0.3, 0.9;
  CHECK((estimate_x0(model, x, 1, sched) - x).norm() <= 1e-14);
}

TEST_CASE("estimate_x0 for a single-point model returns the point") {
  const NoiseSchedule& sched = default_sched();
  Vec p(2);
  p << -0.4, 1.25;
  const ScoreModel model = ScoreModel::empirical({p});
  GaussianStream rng(RngSpec{8, 0});
  for (int t : {10, 400, 990}) {
    const Vec x = rng.normal_vec(2);
    CHECK((estimate_x0(model, x, t, sched) - p).norm() <= 1e-9);
  }
}

TEST_CASE("estimate_x0 equals posterior_mean on random mixtures") {
  const NoiseSchedule& sched = default_sched();
  GaussianStream rng(RngSpec{9, 0});
  std::vector<Vec> means{(Vec(2) << -1.0, 0.3).finished(),
                         (Vec(2) << 1.4, -0.8).finished(),
                         (Vec(2) << 0.0, 1.9).finished()};
  Vec w(3);
  w << 0.3, 0.45, 0.25;
  const ScoreModel model = ScoreModel::gaussian_mixture(means, {0.5, 0.9, 0.7}, w);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = 2.0 * rng.normal_vec(2);
    const int t = 1 + static_cast<int>(rng.raw() % 1000);
    const Vec a = estimate_x0(model, x, t, sched);
    const Vec b = model.posterior_mean(x, t, sched);
    CHECK((a - b).norm() <= 1e-10 * (1.0 + b.norm()));
  }
}

TEST_CASE("zero guidance reproduces the unguided path bitwise") {
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model = std_gaussian(2);
  const EnergyStack stack(EnergyTerm::l2_target((Vec(2) << 2.0, 2.0).finished()));
  GuidanceConfig cfg;
  cfg.rho_base = 0.0;
  for (std::uint64_t seed : {7ULL, 1234ULL}) {
    const RunResult unguided = sample_guided(model, nullptr, cfg, sched, seed);
    const RunResult guided = sample_guided(model, &stack, cfg, sched, seed);
    REQUIRE(unguided.x0.size() == guided.x0.size());
    CHECK(unguided.x0 == guided.x0);
    REQUIRE(unguided.trace.rows.size() == guided.trace.rows.size());
    for (size_t i = 0; i < unguided.trace.rows.size(); ++i) {
      CHECK(unguided.trace.rows[i].x == guided.trace.rows[i].x);
    }
  }
}

TEST_CASE("time travel with r=1 collapses to the plain loop bitwise") {
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model = std_gaussian(2);
  const EnergyStack stack(EnergyTerm::l2_target((Vec(2) << 1.0, -1.0).finished()));
  GuidanceConfig cfg;
  cfg.rho_base = 1.5;
  cfg.travel_repeat = 1;
  for (std::uint64_t seed : {3ULL, 42ULL, 555ULL}) {
    const RunResult plain = sample_guided(model, &stack, cfg, sched, seed);
    const RunResult travel = sample_time_travel(model, &stack, cfg, sched, seed);
    CHECK(plain.x0 == travel.x0);
    CHECK(plain.trace.score_evals == travel.trace.score_evals);
  }
}

TEST_CASE("time travel consumes exactly sum r_t score evaluations") {
  const NoiseSchedule sched = make_linear_schedule(100, 1e-4, 0.02);
  const ScoreModel model = std_gaussian(2);
  const EnergyStack stack(EnergyTerm::l2_target((Vec(2) << 0.5, 0.5).finished()));
  GuidanceConfig cfg;
  cfg.rho_base = 0.1;
  cfg.travel_repeat = 3;
  cfg.stage_lo = 0.3;
  cfg.stage_hi = 0.7;
  const RunResult run = sample_time_travel(model, &stack, cfg, sched, 11);
  long expected = 0;
  for (int t = 1; t <= sched.T; ++t) expected += repeats_at(cfg, t, sched);
  CHECK(run.trace.score_evals == expected);
  CHECK(static_cast<long>(run.trace.rows.size()) == expected);
  // semantic window [30, 70) of 100 steps at r=3 adds 2 * 40 steps
  CHECK(expected == 100 + 2 * 40);
}

TEST_CASE("trace timesteps decrease except within resamples") {
  const NoiseSchedule sched = make_linear_schedule(200, 1e-4, 0.02);
  const ScoreModel model = std_gaussian(2);
  const EnergyStack stack(EnergyTerm::l2_target((Vec(2) << 0.5, 0.5).finished()));
  GuidanceConfig cfg;
  cfg.rho_base = 0.2;
  cfg.travel_repeat = 3;
  const RunResult run = sample_time_travel(model, &stack, cfg, sched, 21);
  for (size_t i = 1; i < run.trace.rows.size(); ++i) {
    const TraceRow& prev = run.trace.rows[i - 1];
    const TraceRow& cur = run.trace.rows[i];
    if (cur.repeat > 1) {
      CHECK(cur.t == prev.t);  // declared resample: stay at t
      CHECK(cur.repeat == prev.repeat + 1);
    } else {
      CHECK(cur.t == prev.t - 1);
    }
  }
}

TEST_CASE("ddim with eta 0 is deterministic given the seed") {
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model = std_gaussian(2);
  GuidanceConfig cfg;
  cfg.ddim_steps = 100;
  cfg.eta_ddim = 0.0;
  const RunResult a = sample_ddim(model, nullptr, cfg, sched, 77);
  const RunResult b = sample_ddim(model, nullptr, cfg, sched, 77);
  CHECK(a.x0 == b.x0);
  // eta = 0 consumes nothing from the ancestral stream: only init noise
  // separates two seeds.
  CHECK(a.trace.score_evals == 100);
}

TEST_CASE("ddim timestep subsequence is valid") {
  const auto taus = ddim_timesteps(1000, 100);
  REQUIRE(taus.size() == 100);
  CHECK(taus.front() == 10);
  CHECK(taus.back() == 1000);
  for (size_t i = 1; i < taus.size(); ++i) CHECK(taus[i] > taus[i - 1]);
  CHECK_THROWS_AS(ddim_timesteps(1000, 0), std::invalid_argument);
  CHECK_THROWS_AS(ddim_timesteps(1000, 1001), std::invalid_argument);
}

TEST_CASE("full-step ddim at eta 1 matches ancestral statistics") {
  const NoiseSchedule sched = make_linear_schedule(200, 1e-4, 0.02);
  const ScoreModel model = std_gaussian(1);
  GuidanceConfig ddim_cfg;
  ddim_cfg.sampler = SamplerKind::kDdim;
  ddim_cfg.ddim_steps = 200;
  ddim_cfg.eta_ddim = 1.0;
  ddim_cfg.record_trace = false;
  GuidanceConfig anc_cfg;
  anc_cfg.record_trace = false;
  const int n = 2000;
  SampleSet a(n, 1), b(n, 1);
  for (int i = 0; i < n; ++i) {
    a.row(i) = sample_ddim(model, nullptr, ddim_cfg, sched, 5000 + i).x0;
    b.row(i) = sample_guided(model, nullptr, anc_cfg, sched, 9000 + i).x0;
  }
  const TwoSampleReport rep =
      two_sample_test(a, b, TwoSampleMetric::kKolmogorov, 300, 4);
  CHECK(rep.p_value > 0.01);
}

TEST_CASE("stage partition covers the run and honors the spec arithmetic") {
  const NoiseSchedule& sched = default_sched();
  GuidanceConfig cfg;
  cfg.stage_lo = 0.3;
  cfg.stage_hi = 0.7;
  const StagePartition part = stage_partition(cfg, sched);
  CHECK(part.semantic.lo == 300);
  CHECK(part.semantic.hi == 700);
  CHECK(part.refinement.lo == 1);
  CHECK(part.refinement.hi == 300);
  CHECK(part.chaotic.lo == 700);
  CHECK(part.chaotic.hi == 1001);
  // contiguous cover of 1..T
  for (int t = 1; t <= sched.T; ++t) {
    const int hits = (part.chaotic.contains(t) ? 1 : 0) +
                     (part.semantic.contains(t) ? 1 : 0) +
                     (part.refinement.contains(t) ? 1 : 0);
    CHECK(hits == 1);
  }

  GuidanceConfig whole;
  whole.stage_lo = 0.0;
  whole.stage_hi = 1.0;
  const StagePartition all = stage_partition(whole, sched);
  CHECK(all.semantic.lo == 1);
  CHECK(all.semantic.hi == sched.T + 1);
  CHECK(all.chaotic.count() == 0);
  CHECK(all.refinement.count() == 0);

  GuidanceConfig bad;
  bad.stage_lo = 0.8;
  bad.stage_hi = 0.2;
  CHECK_THROWS_AS(stage_partition(bad, sched), std::invalid_argument);
}

TEST_CASE("non-finite states abort the run with the step recorded") {
  const NoiseSchedule& sched = default_sched();
  const ScoreModel model = std_gaussian(2);
  const EnergyStack stack(EnergyTerm::l2_target((Vec(2) << 1.0, 1.0).finished()));
  GuidanceConfig cfg;
  cfg.rho_mode = RhoSchedule::kConstant;
  cfg.rho_base = 1e12;  // wildly unstable on purpose
  const RunResult run = sample_guided(model, &stack, cfg, sched, 13);
  CHECK(run.trace.diverged);
  CHECK(run.trace.diverged_at_t >= 1);
  CHECK(run.trace.rows.size() < 1000);
}

TEST_CASE("config validation rejects bad values") {
  GuidanceConfig cfg;
  cfg.rho_base = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GuidanceConfig{};
  cfg.travel_repeat = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GuidanceConfig{};
  cfg.eta_ddim = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GuidanceConfig{};
  cfg.travel_repeat = 2;
  const ScoreModel model = std_gaussian(1);
  CHECK_THROWS_AS(sample_guided(model, nullptr, cfg, default_sched(), 1),
                  std::invalid_argument);
}
