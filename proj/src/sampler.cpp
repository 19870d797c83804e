#include "egdiff/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace egdiff {

std::string rho_schedule_name(RhoSchedule mode) {
  switch (mode) {
    case RhoSchedule::kConstant: return "constant";
    case RhoSchedule::kScaledOneMinusAlphaBar: return "scaled-1m-abar";
    case RhoSchedule::kGradNormNormalized: return "grad-norm";
  }
  return "?";
}

std::string sampler_kind_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kAncestral: return "ancestral";
    case SamplerKind::kTimeTravel: return "time-travel";
    case SamplerKind::kDdim: return "ddim";
  }
  return "?";
}

void GuidanceConfig::validate() const {
  if (!(rho_base >= 0.0))
    throw std::invalid_argument("GuidanceConfig: rho_base must be >= 0");
  if (travel_repeat < 1)
    throw std::invalid_argument("GuidanceConfig: travel_repeat must be >= 1");
  if (!(stage_lo >= 0.0 && stage_lo < stage_hi && stage_hi <= 1.0)) {
    throw std::invalid_argument(
        "GuidanceConfig: require 0 <= stage_lo < stage_hi <= 1");
  }
  if (ddim_steps < 0)
    throw std::invalid_argument("GuidanceConfig: ddim_steps must be >= 0");
  if (!(eta_ddim >= 0.0 && eta_ddim <= 1.0))
    throw std::invalid_argument("GuidanceConfig: eta_ddim must be in [0,1]");
}

StagePartition stage_partition(const GuidanceConfig& cfg,
                               const NoiseSchedule& sched) {
  if (!(cfg.stage_lo >= 0.0 && cfg.stage_lo < cfg.stage_hi &&
        cfg.stage_hi <= 1.0)) {
    throw std::invalid_argument("stage_partition: inverted or invalid bounds");
  }
  const int T = sched.T;
  int lo = static_cast<int>(std::llround(cfg.stage_lo * T));
  int hi = cfg.stage_hi >= 1.0 ? T + 1
                               : static_cast<int>(std::llround(cfg.stage_hi * T));
  lo = std::max(1, lo);
  hi = std::min(T + 1, std::max(hi, lo));
  StagePartition part;
  part.refinement = StageRange{1, lo};
  part.semantic = StageRange{lo, hi};
  part.chaotic = StageRange{hi, T + 1};
  return part;
}

int repeats_at(const GuidanceConfig& cfg, int t, const NoiseSchedule& sched) {
  if (cfg.travel_repeat == 1) return 1;
  return stage_partition(cfg, sched).semantic.contains(t) ? cfg.travel_repeat
                                                          : 1;
}

Vec ancestral_step(const ScoreModel& model, const Vec& x_t, int t,
                   const NoiseSchedule& sched, GaussianStream& eps_stream) {
  if (t < 1 || t > sched.T) {
    throw std::out_of_range("ancestral_step: t = " + std::to_string(t) +
                            " outside 1.." + std::to_string(sched.T));
  }
  const double beta = sched.beta(t);
  Vec next = (1.0 + 0.5 * beta) * x_t + beta * model.score(x_t, t, sched);
  if (t > 1) next += std::sqrt(beta) * eps_stream.normal_vec(x_t.size());
  return next;
}

Vec estimate_x0(const ScoreModel& model, const Vec& x_t, int t,
                const NoiseSchedule& sched) {
  const double abar = sched.alpha_bar(t);
  return (x_t + (1.0 - abar) * model.score(x_t, t, sched)) / std::sqrt(abar);
}

namespace {

double rho_at(const GuidanceConfig& cfg, int t, const NoiseSchedule& sched,
              double grad_norm) {
  switch (cfg.rho_mode) {
    case RhoSchedule::kConstant: return cfg.rho_base;
    case RhoSchedule::kScaledOneMinusAlphaBar:
      return cfg.rho_base * (1.0 - sched.alpha_bar(t));
    case RhoSchedule::kGradNormNormalized:
      return cfg.rho_base / (grad_norm + 1e-12);
  }
  return 0.0;
}

struct StepOutcome {
  Vec x_prev;
  Vec x0;
  double energy = 0.0;
  double grad_norm = 0.0;
};

/// One guided reverse-DDPM step. A single score evaluation at (x_t, t)
/// powers both the ancestral update and the x0|t estimate.
StepOutcome guided_ddpm_step(const ScoreModel& model, const EnergyStack* stack,
                             const GuidanceConfig& cfg,
                             const NoiseSchedule& sched, const Vec& x, int t,
                             GaussianStream& eps_stream, SampleTrace& trace) {
  const double beta = sched.beta(t);
  const double abar = sched.alpha_bar(t);
  const double root = std::sqrt(abar);

  const Vec s = model.score(x, t, sched);
  trace.score_evals += 1;

  StepOutcome out;
  out.x_prev = (1.0 + 0.5 * beta) * x + beta * s;
  if (t > 1) out.x_prev += std::sqrt(beta) * eps_stream.normal_vec(x.size());
  out.x0 = (x + (1.0 - abar) * s) / root;
  if (!out.x0.allFinite() || !out.x_prev.allFinite()) {
    // overflowing state: skip guidance, let the caller abort on this step
    out.x_prev = out.x0.allFinite() ? out.x_prev : out.x0;
    return out;
  }

  if (stack != nullptr) {
    out.energy = stack->value(out.x0);
    const Vec ge = stack->grad(out.x0);
    trace.energy_grad_evals += 1;
    Vec g;
    if (resolve_jacobian_mode(cfg.jacobian_mode, static_cast<int>(x.size())) ==
        JacobianMode::kExact) {
      const Mat h = model.score_jacobian(x, t, sched);
      const Eigen::Index d = x.size();
      g = ((Mat::Identity(d, d) + (1.0 - abar) * h) / root).transpose() * ge;
    } else {
      g = ge / root;
    }
    out.grad_norm = g.norm();
    const double rho = rho_at(cfg, t, sched, out.grad_norm);
    if (rho != 0.0) out.x_prev -= rho * g;
  }
  return out;
}

void record_row(SampleTrace& trace, bool enabled, int t, int repeat,
                const StepOutcome& out, const Vec& x_before) {
  if (!enabled) return;
  TraceRow row;
  row.step_index = static_cast<int>(trace.rows.size());
  row.t = t;
  row.repeat = repeat;
  row.energy = out.energy;
  row.grad_norm = out.grad_norm;
  row.x = x_before;
  row.x0 = out.x0;
  trace.rows.push_back(std::move(row));
}

SampleTrace make_trace(const GuidanceConfig& cfg, const ScoreModel& model,
                       std::uint64_t seed, const char* sampler) {
  SampleTrace trace;
  trace.seed = seed;
  trace.rho_mode = rho_schedule_name(cfg.rho_mode);
  trace.jacobian_mode = jacobian_mode_name(
      resolve_jacobian_mode(cfg.jacobian_mode, model.dim()));
  trace.sampler = sampler;
  return trace;
}

bool abort_if_diverged(const Vec& x, int t, SampleTrace& trace) {
  if (x.allFinite()) return false;
  trace.diverged = true;
  trace.diverged_at_t = t;
  return true;
}

}  // namespace

RunResult sample_guided(const ScoreModel& model, const EnergyStack* stack,
                        const GuidanceConfig& cfg, const NoiseSchedule& sched,
                        std::uint64_t seed) {
  cfg.validate();
  if (cfg.travel_repeat != 1) {
    throw std::invalid_argument(
        "sample_guided: plain mode requires travel_repeat == 1");
  }
  RunStreams streams(seed);
  RunResult result;
  result.trace = make_trace(cfg, model, seed, "ancestral");

  Vec x = streams.init.normal_vec(model.dim());
  for (int t = sched.T; t >= 1; --t) {
    const StepOutcome out = guided_ddpm_step(model, stack, cfg, sched, x, t,
                                             streams.ancestral, result.trace);
    record_row(result.trace, cfg.record_trace, t, 1, out, x);
    x = out.x_prev;
    if (abort_if_diverged(x, t, result.trace)) break;
  }
  result.x0 = std::move(x);
  return result;
}

RunResult sample_time_travel(const ScoreModel& model, const EnergyStack* stack,
                             const GuidanceConfig& cfg,
                             const NoiseSchedule& sched, std::uint64_t seed) {
  cfg.validate();
  RunStreams streams(seed);
  RunResult result;
  result.trace = make_trace(cfg, model, seed, "time-travel");

  Vec x = streams.init.normal_vec(model.dim());
  for (int t = sched.T; t >= 1 && !result.trace.diverged; --t) {
    const int r = repeats_at(cfg, t, sched);
    const double beta = sched.beta(t);
    for (int rep = 1; rep <= r; ++rep) {
      const StepOutcome out = guided_ddpm_step(model, stack, cfg, sched, x, t,
                                               streams.ancestral, result.trace);
      record_row(result.trace, cfg.record_trace, t, rep, out, x);
      if (rep < r) {
        // Re-noise x_{t-1} back to timestep t and repeat the guided step.
        x = std::sqrt(1.0 - beta) * out.x_prev +
            std::sqrt(beta) * streams.travel.normal_vec(x.size());
      } else {
        x = out.x_prev;
      }
      if (abort_if_diverged(x, t, result.trace)) break;
    }
  }
  result.x0 = std::move(x);
  return result;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw std::invalid_argument("ddim_timesteps: steps must be in 1..T");
  }
  std::vector<int> taus(static_cast<size_t>(steps));
  for (int k = 1; k <= steps; ++k) {
    taus[static_cast<size_t>(k - 1)] = static_cast<int>(
        std::llround(static_cast<double>(k) * T / static_cast<double>(steps)));
  }
  for (size_t i = 1; i < taus.size(); ++i) {
    if (taus[i] <= taus[i - 1]) {
      throw std::invalid_argument("ddim_timesteps: subsequence not strictly increasing");
    }
  }
  taus.back() = T;
  return taus;
}

RunResult sample_ddim(const ScoreModel& model, const EnergyStack* stack,
                      const GuidanceConfig& cfg, const NoiseSchedule& sched,
                      std::uint64_t seed) {
  cfg.validate();
  const int steps = cfg.ddim_steps == 0 ? sched.T : cfg.ddim_steps;
  const std::vector<int> taus = ddim_timesteps(sched.T, steps);

  RunStreams streams(seed);
  RunResult result;
  result.trace = make_trace(cfg, model, seed, "ddim");

  Vec x = streams.init.normal_vec(model.dim());
  for (int k = static_cast<int>(taus.size()) - 1; k >= 0; --k) {
    const int t = taus[static_cast<size_t>(k)];
    const int t_prev = k > 0 ? taus[static_cast<size_t>(k - 1)] : 0;
    const double abar = sched.alpha_bar(t);
    const double abar_prev = sched.alpha_bar(t_prev);
    const double root = std::sqrt(abar);

    const Vec s = model.score(x, t, sched);
    result.trace.score_evals += 1;
    StepOutcome out;
    out.x0 = (x + (1.0 - abar) * s) / root;

    const Vec eps_hat = (x - root * out.x0) / std::sqrt(1.0 - abar);
    const double sigma = cfg.eta_ddim *
                         std::sqrt((1.0 - abar_prev) / (1.0 - abar)) *
                         std::sqrt(1.0 - abar / abar_prev);
    const double dir_coef =
        std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));
    out.x_prev = std::sqrt(abar_prev) * out.x0 + dir_coef * eps_hat;
    if (sigma > 0.0) {
      out.x_prev += sigma * streams.ancestral.normal_vec(x.size());
    }

    if (stack != nullptr && out.x0.allFinite() && out.x_prev.allFinite()) {
      out.energy = stack->value(out.x0);
      const Vec ge = stack->grad(out.x0);
      result.trace.energy_grad_evals += 1;
      Vec g;
      if (resolve_jacobian_mode(cfg.jacobian_mode, model.dim()) ==
          JacobianMode::kExact) {
        const Mat h = model.score_jacobian(x, t, sched);
        const Eigen::Index d = x.size();
        g = ((Mat::Identity(d, d) + (1.0 - abar) * h) / root).transpose() * ge;
      } else {
        g = ge / root;
      }
      out.grad_norm = g.norm();
      const double rho = rho_at(cfg, t, sched, out.grad_norm);
      if (rho != 0.0) out.x_prev -= rho * g;
    }

    record_row(result.trace, cfg.record_trace, t, 1, out, x);
    x = out.x_prev;
    if (abort_if_diverged(x, t, result.trace)) break;
  }
  result.x0 = std::move(x);
  return result;
}

RunResult run_sampler(const ScoreModel& model, const EnergyStack* stack,
                      const GuidanceConfig& cfg, const NoiseSchedule& sched,
                      std::uint64_t seed) {
  switch (cfg.sampler) {
    case SamplerKind::kAncestral:
      return sample_guided(model, stack, cfg, sched, seed);
    case SamplerKind::kTimeTravel:
      return sample_time_travel(model, stack, cfg, sched, seed);
    case SamplerKind::kDdim:
      return sample_ddim(model, stack, cfg, sched, seed);
  }
  throw std::logic_error("run_sampler: unknown sampler kind");
}

}  // namespace egdiff
