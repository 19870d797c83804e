"""Energy-guided diffusion sampling on analytic score models."""

from egdiff._core import (  # noqa: F401
    RNG_ALGORITHM,
    EnergyStack,
    EnergyTerm,
    GuidanceConfig,
    NoiseSchedule,
    RunResult,
    SampleTrace,
    ScoreModel,
    TraceRow,
    ancestral_step,
    benchmark_names,
    ddim_timesteps,
    ddnm_update,
    energy_distance,
    estimate_x0,
    forward_noise,
    guided_grad_wrt_xt,
    make_linear_schedule,
    rejection_sample,
    run_benchmark,
    sample_ddim,
    sample_guided,
    sample_time_travel,
    stage_partition,
    standardized_energy_distance,
    two_sample_test,
)

__all__ = [
    "RNG_ALGORITHM",
    "EnergyStack",
    "EnergyTerm",
    "GuidanceConfig",
    "NoiseSchedule",
    "RunResult",
    "SampleTrace",
    "ScoreModel",
    "TraceRow",
    "ancestral_step",
    "benchmark_names",
    "ddim_timesteps",
    "ddnm_update",
    "energy_distance",
    "estimate_x0",
    "forward_noise",
    "guided_grad_wrt_xt",
    "make_linear_schedule",
    "rejection_sample",
    "run_benchmark",
    "sample_ddim",
    "sample_guided",
    "sample_time_travel",
    "stage_partition",
    "standardized_energy_distance",
    "two_sample_test",
]
