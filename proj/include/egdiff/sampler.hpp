#pragma once

#include <string>
#include <vector>

#include "egdiff/energy.hpp"

namespace egdiff {

enum class RhoSchedule { kConstant, kScaledOneMinusAlphaBar, kGradNormNormalized };

std::string rho_schedule_name(RhoSchedule mode);

enum class SamplerKind { kAncestral, kTimeTravel, kDdim };

std::string sampler_kind_name(SamplerKind kind);

/// Learning-rate schedule, time-travel repeats, stage bounds and DDIM
/// settings for one guided run.
struct GuidanceConfig {
  RhoSchedule rho_mode = RhoSchedule::kScaledOneMinusAlphaBar;
  double rho_base = 0.0;

  int travel_repeat = 1;   // r_t inside the semantic stage; 1 elsewhere
  double stage_lo = 0.3;   // f_lo, fraction of T
  double stage_hi = 0.7;   // f_hi, fraction of T

  int ddim_steps = 0;      // 0 = full schedule
  double eta_ddim = 1.0;

  JacobianMode jacobian_mode = JacobianMode::kAuto;
  SamplerKind sampler = SamplerKind::kAncestral;

  bool record_trace = true;  // batch experiments disable row recording

  void validate() const;
};

/// Half-open timestep ranges [lo, hi) partitioning 1..T into the three
/// phases of the reverse trajectory.
struct StageRange {
  int lo = 0;
  int hi = 0;
  bool contains(int t) const { return t >= lo && t < hi; }
  int count() const { return hi > lo ? hi - lo : 0; }
};

struct StagePartition {
  StageRange chaotic;     // high t
  StageRange semantic;    // middle, where travel repeats apply
  StageRange refinement;  // low t
};

StagePartition stage_partition(const GuidanceConfig& cfg,
                               const NoiseSchedule& sched);

/// Repeat count r_t implied by the config: travel_repeat inside the
/// semantic stage, 1 outside.
int repeats_at(const GuidanceConfig& cfg, int t, const NoiseSchedule& sched);

struct TraceRow {
  int step_index = 0;
  int t = 0;
  int repeat = 1;        // 1..r_t, execution order
  double energy = 0.0;   // stack energy at x0|t
  double grad_norm = 0.0;
  Vec x;                 // x_t before the step
  Vec x0;                // x0|t estimate
};

/// Per-run record: every executed (t, repeat) plus instrumentation counters.
struct SampleTrace {
  std::vector<TraceRow> rows;
  std::uint64_t seed = 0;
  std::string rng_algorithm = kRngAlgorithm;
  std::string rho_mode;
  std::string jacobian_mode;
  std::string sampler;
  long score_evals = 0;
  long energy_grad_evals = 0;
  bool diverged = false;
  int diverged_at_t = -1;
};

struct RunResult {
  Vec x0;
  SampleTrace trace;
};

/// One reverse DDPM step: (1 + beta_t/2) x + beta_t * score + sqrt(beta_t) eps,
/// with eps = 0 at t = 1.
Vec ancestral_step(const ScoreModel& model, const Vec& x_t, int t,
                   const NoiseSchedule& sched, GaussianStream& eps_stream);

/// x0|t = (x_t + (1 - abar_t) score(x_t, t)) / sqrt(abar_t).
Vec estimate_x0(const ScoreModel& model, const Vec& x_t, int t,
                const NoiseSchedule& sched);

/// Plain guided ancestral sampling: per step, reverse DDPM update, x0|t,
/// energy gradient through x0|t, then subtract rho_t g_t. stack == nullptr
/// runs unconditionally with identical randomness consumption.
RunResult sample_guided(const ScoreModel& model, const EnergyStack* stack,
                        const GuidanceConfig& cfg, const NoiseSchedule& sched,
                        std::uint64_t seed);

/// Guided sampling with the efficient time-travel strategy: at timestep t the
/// guided step runs r_t times, re-noising x_{t-1} back to step t between
/// repeats (never after the last). Re-noising draws from a dedicated stream.
RunResult sample_time_travel(const ScoreModel& model, const EnergyStack* stack,
                             const GuidanceConfig& cfg,
                             const NoiseSchedule& sched, std::uint64_t seed);

/// DDIM over an evenly spaced sub-sequence of cfg.ddim_steps timesteps
/// (0 = all of them). eta_ddim = 0 is fully deterministic given x_T; the
/// guidance subtraction is applied to the post-step iterate exactly as in
/// the plain loop.
RunResult sample_ddim(const ScoreModel& model, const EnergyStack* stack,
                      const GuidanceConfig& cfg, const NoiseSchedule& sched,
                      std::uint64_t seed);

/// Evenly spaced strictly increasing timestep subsequence ending at T.
std::vector<int> ddim_timesteps(int T, int steps);

/// Dispatch on cfg.sampler.
RunResult run_sampler(const ScoreModel& model, const EnergyStack* stack,
                      const GuidanceConfig& cfg, const NoiseSchedule& sched,
                      std::uint64_t seed);

}  // namespace egdiff
