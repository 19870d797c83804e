#include <doctest.h>

#include <cmath>

#include "egdiff/schedule.hpp"

using namespace egdiff;

TEST_CASE("linear schedule single step") {
  const NoiseSchedule sched = make_linear_schedule(1, 0.1, 0.1);
  CHECK(sched.T == 1);
  CHECK(sched.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(sched.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("linear schedule two-step product") {
  const NoiseSchedule sched = make_linear_schedule(2, 0.1, 0.2);
  CHECK(sched.alpha_bar(2) == doctest::Approx(0.9 * 0.8).epsilon(1e-15));
}

TEST_CASE("default ladder matches an independent product accumulation") {
  const NoiseSchedule sched = make_linear_schedule(1000, 1e-4, 0.02);
  // Oracle: long-double accumulation of the products, kept independent of
  // the construction path.
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    const long double beta =
        1e-4L + (static_cast<long double>(t - 1) / 999.0L) * (0.02L - 1e-4L);
    prod *= 1.0L - beta;
    CHECK(std::abs(sched.alpha_bar(t) - static_cast<double>(prod)) <=
          1e-12 * static_cast<double>(prod));
  }
  CHECK(schedule_consistency_error(sched) <= 1e-12);
}

TEST_CASE("schedule rejects bad arguments") {
  CHECK_THROWS_AS(make_linear_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("alpha_bar strictly decreasing") {
  const NoiseSchedule sched = make_linear_schedule(500, 5e-4, 0.05);
  for (int t = 2; t <= sched.T; ++t) {
    CHECK(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
  }
}

TEST_CASE("forward noise with no accumulated noise returns x0 exactly") {
  // beta so small that 1 - beta rounds to 1, hence alpha_bar == 1 exactly.
  const NoiseSchedule sched = make_schedule({1e-300});
  GaussianStream rng(RngSpec{42, 0});
  Vec x0(3);
  x0 << 1.5, -2.25, 0.125;
  const Vec out = forward_noise(x0, 1, sched, rng);
  CHECK(out == x0);
}

TEST_CASE("forward noise of the origin is pure scaled noise") {
  const NoiseSchedule sched = make_linear_schedule(100, 1e-3, 0.05);
  const int t = 60;
  const Vec zero = Vec::Zero(4);
  GaussianStream rng_a(RngSpec{7, 3});
  GaussianStream rng_b(RngSpec{7, 3});
  const Vec out = forward_noise(zero, t, sched, rng_a);
  const Vec eps = rng_b.normal_vec(4);
  const double scale = std::sqrt(1.0 - sched.alpha_bar(t));
  CHECK((out - scale * eps).norm() == 0.0);
}

TEST_CASE("forward noise rejects t out of range") {
  const NoiseSchedule sched = make_linear_schedule(10, 1e-3, 0.02);
  GaussianStream rng(RngSpec{1, 0});
  const Vec x0 = Vec::Zero(2);
  CHECK_THROWS_AS(forward_noise(x0, 0, sched, rng), std::out_of_range);
  CHECK_THROWS_AS(forward_noise(x0, 11, sched, rng), std::out_of_range);
}

TEST_CASE("forward noise Monte Carlo moments") {
  const NoiseSchedule sched = make_linear_schedule(1000, 1e-4, 0.02);
  const int t = 400;
  Vec x0(2);
  x0 << 1.0, -2.0;
  const int n = 100000;
  GaussianStream rng(RngSpec{11, 3});
  Vec mean = Vec::Zero(2);
  Vec second = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vec draw = forward_noise(x0, t, sched, rng);
    mean += draw;
    second += draw.cwiseProduct(draw);
  }
  mean /= n;
  second /= n;
  const double abar = sched.alpha_bar(t);
  const double var_expected = 1.0 - abar;
  const double mean_tol = 4.0 * std::sqrt(var_expected / n);
  for (int a = 0; a < 2; ++a) {
    CHECK(std::abs(mean[a] - std::sqrt(abar) * x0[a]) <= mean_tol);
    const double var = second[a] - mean[a] * mean[a];
    CHECK(std::abs(var - var_expected) <= 6.0 * var_expected * std::sqrt(2.0 / n));
  }
}

TEST_CASE("identical rng specs reproduce identical draws") {
  GaussianStream a(RngSpec{123456, 2});
  GaussianStream b(RngSpec{123456, 2});
  for (int i = 0; i < 100; ++i) {
    CHECK(a.normal() == b.normal());
  }
  GaussianStream c(RngSpec{123456, 3});
  bool any_differ = false;
  GaussianStream a2(RngSpec{123456, 2});
  for (int i = 0; i < 10; ++i) {
    if (a2.normal() != c.normal()) any_differ = true;
  }
  CHECK(any_differ);
}
