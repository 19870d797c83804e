#include "egdiff/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace egdiff {

RejectionResult rejection_sample(const OracleSampler& oracle, int n,
                                 GaussianStream& rng) {
  if (n < 1) throw std::invalid_argument("rejection_sample: n must be >= 1");
  if (!(oracle.lambda_eff >= 0.0)) {
    throw std::invalid_argument("rejection_sample: lambda_eff must be >= 0");
  }
  const int d = oracle.base.dim();
  RejectionResult result;
  result.samples.resize(n, d);
  long accepted = 0;
  long attempts = 0;
  while (accepted < n) {
    ++attempts;
    const Vec x = oracle.base.sample_data(rng);
    const double accept_p = std::exp(-oracle.lambda_eff * oracle.energy.value(x));
    if (rng.uniform() < accept_p) {
      result.samples.row(accepted) = x.transpose();
      ++accepted;
    }
    if (attempts >= 200000 &&
        static_cast<double>(accepted) / static_cast<double>(attempts) < 1e-4) {
      throw std::runtime_error(
          "rejection_sample: acceptance rate below 1e-4 after " +
          std::to_string(attempts) +
          " attempts; task too hard for rejection, use the grid oracle");
    }
  }
  result.attempts = attempts;
  result.acceptance_rate =
      static_cast<double>(accepted) / static_cast<double>(attempts);
  return result;
}

long GridTable::cells() const {
  long total = 1;
  for (int n : spec.npts) total *= n;
  return total;
}

Vec GridTable::center(long flat_index) const {
  const int d = dim();
  Vec c(d);
  long rem = flat_index;
  for (int a = d - 1; a >= 0; --a) {
    const int n = spec.npts[static_cast<size_t>(a)];
    const long i = rem % n;
    rem /= n;
    const double w = (spec.hi[a] - spec.lo[a]) / n;
    c[a] = spec.lo[a] + (static_cast<double>(i) + 0.5) * w;
  }
  return c;
}

GridSpec auto_grid(const ScoreModel& model, int npts_per_axis,
                   double sigmas_out) {
  const int d = model.dim();
  if (d > 2) throw std::invalid_argument("auto_grid: d must be <= 2");
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  for (int k = 0; k < model.components(); ++k) {
    const double pad = sigmas_out * model.sigmas()[static_cast<size_t>(k)];
    for (int a = 0; a < d; ++a) {
      lo[a] = std::min(lo[a], model.means()[static_cast<size_t>(k)][a] - pad);
      hi[a] = std::max(hi[a], model.means()[static_cast<size_t>(k)][a] + pad);
    }
  }
  GridSpec spec;
  spec.lo = lo;
  spec.hi = hi;
  spec.npts.assign(static_cast<size_t>(d), npts_per_axis);
  return spec;
}

GridTable grid_posterior(const OracleSampler& oracle, const GridSpec& spec) {
  const int d = oracle.base.dim();
  if (d > 2) throw std::invalid_argument("grid_posterior: d must be <= 2");
  if (static_cast<int>(spec.npts.size()) != d || spec.lo.size() != d ||
      spec.hi.size() != d) {
    throw std::invalid_argument("grid_posterior: grid spec dimension mismatch");
  }
  GridTable table;
  table.spec = spec;
  double vol = 1.0;
  for (int a = 0; a < d; ++a) {
    if (!(spec.hi[a] > spec.lo[a]) || spec.npts[static_cast<size_t>(a)] < 2) {
      throw std::invalid_argument("grid_posterior: invalid grid axis");
    }
    vol *= (spec.hi[a] - spec.lo[a]) / spec.npts[static_cast<size_t>(a)];
  }
  table.cell_volume = vol;

  const long cells = table.cells();
  table.values.resize(static_cast<size_t>(cells));
  double base_mass = 0.0;
  double post_mass = 0.0;
  for (long i = 0; i < cells; ++i) {
    const Vec c = table.center(i);
    const double base = std::exp(oracle.base.data_log_density(c));
    base_mass += base * vol;
    const double v = base * std::exp(-oracle.lambda_eff * oracle.energy.value(c));
    table.values[static_cast<size_t>(i)] = v;
    post_mass += v * vol;
  }
  table.base_coverage = base_mass;
  if (base_mass < 1.0 - 1e-6) {
    throw std::runtime_error(
        "grid_posterior: grid covers only " + std::to_string(base_mass) +
        " of the base mass; enlarge the grid");
  }
  for (double& v : table.values) v /= post_mass;
  return table;
}

SampleSet grid_resample(const GridTable& table, int n, GaussianStream& rng) {
  const int d = table.dim();
  const long cells = table.cells();
  std::vector<double> cdf(static_cast<size_t>(cells));
  double acc = 0.0;
  for (long i = 0; i < cells; ++i) {
    acc += table.values[static_cast<size_t>(i)] * table.cell_volume;
    cdf[static_cast<size_t>(i)] = acc;
  }
  std::vector<double> widths(static_cast<size_t>(d));
  for (int a = 0; a < d; ++a) {
    widths[static_cast<size_t>(a)] =
        (table.spec.hi[a] - table.spec.lo[a]) / table.spec.npts[static_cast<size_t>(a)];
  }
  SampleSet out(n, d);
  for (int s = 0; s < n; ++s) {
    const double u = rng.uniform() * acc;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    const long idx = it == cdf.end() ? cells - 1 : it - cdf.begin();
    Vec c = table.center(idx);
    for (int a = 0; a < d; ++a) {
      c[a] += (rng.uniform() - 0.5) * widths[static_cast<size_t>(a)];
    }
    out.row(s) = c.transpose();
  }
  return out;
}

double table_total_variation(const GridTable& a, const GridTable& b) {
  if (a.values.size() != b.values.size()) {
    throw std::invalid_argument("table_total_variation: table size mismatch");
  }
  double tv = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    tv += std::abs(a.values[i] - b.values[i]);
  }
  return 0.5 * tv * a.cell_volume;
}

double table_mean_energy(const GridTable& table, const EnergyStack& stack) {
  double acc = 0.0;
  const long cells = table.cells();
  for (long i = 0; i < cells; ++i) {
    acc += table.values[static_cast<size_t>(i)] * table.cell_volume *
           stack.value(table.center(i));
  }
  return acc;
}

double finite_diff_check(const ScalarField& f, const VectorField& grad_f,
                         const std::vector<Vec>& points, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be > 0");
  // Denominator guard: the absolute noise floor of a central difference is
  // |f| eps_mach / h (~1e-10 at h=1e-5 for |f| ~ 10), so gradients below
  // 1e-4 in norm cannot be resolved to 1e-5 relative accuracy.
  constexpr double kEps = 1e-4;
  double worst = 0.0;
  for (const Vec& p : points) {
    const Vec g = grad_f(p);
    Vec fd(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Vec hi = p, lo = p;
      hi[i] += h;
      lo[i] -= h;
      fd[i] = (f(hi) - f(lo)) / (2.0 * h);
    }
    worst = std::max(worst, (fd - g).norm() / (g.norm() + kEps));
  }
  return worst;
}

DpsDdnmReport dps_ddnm_suite(const LinearOperator& op, const Vec& y,
                             const ScoreModel& model, const NoiseSchedule& sched,
                             const DpsDdnmOptions& opts) {
  DpsDdnmReport report;
  const int d = static_cast<int>(op.A.cols());

  const double y_scale = std::max(1.0, y.norm());
  report.y_in_range = (op.A * op.pinv * y - y).norm() <= 1e-8 * y_scale;

  GaussianStream rng(RngSpec{opts.seed, static_cast<std::uint64_t>(StreamRole::kOracle)});

  for (int i = 0; i < opts.consistency_draws; ++i) {
    const Vec x0 = 2.0 * rng.normal_vec(d);
    const Vec fixed = ddnm_update(op, y, x0);
    report.max_consistency_residual = std::max(
        report.max_consistency_residual, (op.A * fixed - y).norm());
  }

  // At a data-consistent point both update directions vanish.
  const Vec x_star = op.pinv * y;
  const Vec dps_at = 2.0 * op.A.transpose() * (y - op.A * x_star);
  const Vec ddnm_at = op.pinv * (y - op.A * x_star);
  report.dir_norm_at_consistency = std::max(dps_at.norm(), ddnm_at.norm());

  report.min_inner_product = std::numeric_limits<double>::infinity();
  for (int i = 0; i < opts.direction_draws; ++i) {
    const Vec x0 = 3.0 * rng.normal_vec(d);
    const Vec residual = y - op.A * x0;
    const Vec dps_dir = 2.0 * op.A.transpose() * residual;
    const Vec ddnm_dir = op.pinv * residual;
    report.min_inner_product =
        std::min(report.min_inner_product, dps_dir.dot(ddnm_dir));
  }

  EnergyStack stack(EnergyTerm::linear_measurement(op, y));
  int successes = 0;
  for (int s = 0; s < opts.guided_seeds; ++s) {
    const RunResult run = run_sampler(model, &stack, opts.guided_cfg, sched,
                                      opts.seed * 1000003ULL + static_cast<std::uint64_t>(s));
    if (!run.trace.diverged &&
        (op.A * run.x0 - y).norm() < opts.residual_threshold) {
      ++successes;
    }
  }
  report.guided_success_rate =
      opts.guided_seeds > 0
          ? static_cast<double>(successes) / opts.guided_seeds
          : 1.0;

  report.pass = report.y_in_range &&
                report.max_consistency_residual <= 1e-8 &&
                report.dir_norm_at_consistency <= 1e-8 &&
                report.min_inner_product >= -1e-12 &&
                report.guided_success_rate >= 0.95;
  return report;
}

SampleSet sample_batch(const ScoreModel& model, const EnergyStack* stack,
                       const GuidanceConfig& cfg, const NoiseSchedule& sched,
                       std::uint64_t seed0, int n) {
  GuidanceConfig quiet = cfg;
  quiet.record_trace = false;
  SampleSet out(n, model.dim());
  for (int i = 0; i < n; ++i) {
    const RunResult run =
        run_sampler(model, stack, quiet, sched, seed0 + static_cast<std::uint64_t>(i));
    out.row(i) = run.x0.transpose();
  }
  return out;
}

CalibrationResult calibrate_rho(const ScoreModel& model,
                                const EnergyStack& stack,
                                const NoiseSchedule& sched, double lambda_eff,
                                const CalibrationOptions& opts) {
  if (!(lambda_eff >= 0.0)) {
    throw std::invalid_argument("calibrate_rho: lambda_eff must be >= 0");
  }
  OracleSampler oracle{model, stack, lambda_eff};
  const GridTable table = grid_posterior(oracle, auto_grid(model, opts.grid_pts));

  CalibrationResult result;
  result.target_mean_energy = table_mean_energy(table, stack);

  // Mean final energy at base rho; +inf when any run diverges so that the
  // search backs away from unstable learning rates.
  auto mean_energy_at = [&](double rho) {
    GuidanceConfig cfg = opts.cfg;
    cfg.rho_base = rho;
    cfg.record_trace = false;
    double acc = 0.0;
    for (int i = 0; i < opts.n_calibration; ++i) {
      const RunResult run = run_sampler(model, &stack, cfg, sched,
                                        opts.seed + static_cast<std::uint64_t>(i));
      if (run.trace.diverged || !run.x0.allFinite()) {
        ++result.evaluations;
        return std::numeric_limits<double>::infinity();
      }
      acc += stack.value(run.x0);
    }
    ++result.evaluations;
    return acc / static_cast<double>(opts.n_calibration);
  };

  double rho = 0.0;
  if (lambda_eff > 0.0) {
    const double target = result.target_mean_energy;
    double lo = 0.0;
    double f_lo = mean_energy_at(lo) - target;
    if (f_lo <= 0.0) {
      rho = 0.0;  // unguided already at or below the target temperature
    } else {
      double hi = opts.rho_hi;
      double f_hi = mean_energy_at(hi) - target;
      int adjustments = 0;
      // back off from divergent rho, grow past insufficient rho
      while ((std::isinf(f_hi) || f_hi > 0.0) && adjustments < 40) {
        if (std::isinf(f_hi)) {
          hi *= 0.5;
        } else {
          lo = hi;
          f_lo = f_hi;
          hi *= 2.0;
        }
        f_hi = mean_energy_at(hi) - target;
        ++adjustments;
        if (hi < 1e-9 || hi > 1e9) break;
      }
      if (std::isinf(f_hi) || f_hi > 0.0) {
        throw std::runtime_error(
            "calibrate_rho: no bracketing rho found (last tried " +
            std::to_string(hi) + "); the guided family cannot reach the "
            "target mean energy stably");
      }
      for (int it = 0; it < opts.max_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = mean_energy_at(mid) - target;
        if (std::isinf(f_mid) || f_mid <= 0.0) hi = mid;
        else lo = mid;
      }
      rho = hi;  // the smallest certified-at-or-below-target rate
    }
  }
  result.rho = rho;

  GuidanceConfig cfg = opts.cfg;
  cfg.rho_base = rho;
  const SampleSet guided =
      sample_batch(model, &stack, cfg, sched, opts.seed + 777, opts.n_final);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < guided.rows(); ++i) {
    acc += stack.value(guided.row(i).transpose());
  }
  result.achieved_mean_energy = acc / static_cast<double>(guided.rows());

  GaussianStream rng(RngSpec{opts.seed + 99, static_cast<std::uint64_t>(StreamRole::kOracle)});
  const SampleSet oracle_draws = grid_resample(table, opts.n_final, rng);
  result.achieved_distance = standardized_energy_distance(guided, oracle_draws);
  return result;
}

}  // namespace egdiff
