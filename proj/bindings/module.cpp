#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "egdiff/harness.hpp"

namespace py = pybind11;
using namespace egdiff;

namespace {

GuidanceConfig make_config(const std::string& rho_mode, double rho_base,
                           int travel_repeat, double stage_lo, double stage_hi,
                           int ddim_steps, double eta_ddim,
                           const std::string& jacobian_mode,
                           const std::string& sampler, bool record_trace) {
  Json spec{{"rho_mode", rho_mode},       {"rho_base", rho_base},
            {"travel_repeat", travel_repeat}, {"stage_lo", stage_lo},
            {"stage_hi", stage_hi},       {"ddim_steps", ddim_steps},
            {"eta_ddim", eta_ddim},       {"jacobian_mode", jacobian_mode},
            {"sampler", sampler},         {"record_trace", record_trace}};
  return guidance_from_json(spec);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Energy-guided diffusion sampling on analytic score models";

  m.attr("RNG_ALGORITHM") = kRngAlgorithm;

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("T", &NoiseSchedule::T)
      .def_readonly("betas", &NoiseSchedule::betas)
      .def_readonly("alpha_bars", &NoiseSchedule::alpha_bars)
      .def("beta", &NoiseSchedule::beta, py::arg("t"))
      .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"));

  m.def("make_linear_schedule", &make_linear_schedule, py::arg("T"),
        py::arg("beta_min"), py::arg("beta_max"));

  m.def(
      "forward_noise",
      [](const Vec& x0, int t, const NoiseSchedule& sched, std::uint64_t seed,
         std::uint64_t stream_id) {
        return forward_noise(x0, t, sched, RngSpec{seed, stream_id});
      },
      py::arg("x0"), py::arg("t"), py::arg("sched"), py::arg("seed"),
      py::arg("stream_id") = static_cast<std::uint64_t>(StreamRole::kForwardNoise));

  py::class_<ScoreModel>(m, "ScoreModel")
      .def_static("isotropic_gaussian", &ScoreModel::isotropic_gaussian,
                  py::arg("mean"), py::arg("sigma"))
      .def_static("gaussian_mixture", &ScoreModel::gaussian_mixture,
                  py::arg("means"), py::arg("sigmas"), py::arg("weights"))
      .def_static("empirical", &ScoreModel::empirical, py::arg("points"))
      .def_property_readonly("dim", &ScoreModel::dim)
      .def_property_readonly("kind", &ScoreModel::kind_name)
      .def("score", &ScoreModel::score, py::arg("x"), py::arg("t"), py::arg("sched"))
      .def("log_density", &ScoreModel::log_density, py::arg("x"), py::arg("t"),
           py::arg("sched"))
      .def("posterior_mean", &ScoreModel::posterior_mean, py::arg("x"),
           py::arg("t"), py::arg("sched"))
      .def("score_jacobian", &ScoreModel::score_jacobian, py::arg("x"),
           py::arg("t"), py::arg("sched"))
      .def(
          "sample_data",
          [](const ScoreModel& model, int n, std::uint64_t seed) {
            GaussianStream rng(RngSpec{seed, static_cast<std::uint64_t>(StreamRole::kOracle)});
            SampleSet out(n, model.dim());
            for (int i = 0; i < n; ++i) out.row(i) = model.sample_data(rng).transpose();
            return out;
          },
          py::arg("n"), py::arg("seed"));

  py::class_<EnergyTerm>(m, "EnergyTerm")
      .def_static("l2_target",
                  py::overload_cast<Mat, Vec>(&EnergyTerm::l2_target),
                  py::arg("projection"), py::arg("target"))
      .def_static("l2_target", py::overload_cast<Vec>(&EnergyTerm::l2_target),
                  py::arg("target"))
      .def_static(
          "linear_measurement",
          [](const Mat& a, Vec y) {
            return EnergyTerm::linear_measurement(LinearOperator::from_matrix(a),
                                                  std::move(y));
          },
          py::arg("matrix"), py::arg("y"))
      .def_static("lowpass", &EnergyTerm::lowpass, py::arg("source"),
                  py::arg("factor") = 2)
      .def_static("gram_style", &EnergyTerm::gram_style, py::arg("reference"),
                  py::arg("dim"), py::arg("feature_seed"))
      .def_static("region", &EnergyTerm::region, py::arg("center"),
                  py::arg("radius"))
      .def_static(
          "mixture_class",
          [](const ScoreModel& model, int index) {
            return EnergyTerm::mixture_class(model, index);
          },
          py::arg("model"), py::arg("index"))
      .def_property_readonly("kind", &EnergyTerm::kind_name)
      .def("value", &EnergyTerm::value, py::arg("x0"))
      .def("grad", &EnergyTerm::grad, py::arg("x0"));

  py::class_<EnergyStack>(m, "EnergyStack")
      .def(py::init<std::vector<EnergyTerm>, Vec>(), py::arg("terms"),
           py::arg("weights"))
      .def(py::init<EnergyTerm>(), py::arg("term"))
      .def("value", &EnergyStack::value, py::arg("x0"))
      .def("grad", &EnergyStack::grad, py::arg("x0"))
      .def("term_values", &EnergyStack::term_values, py::arg("x0"));

  m.def(
      "guided_grad_wrt_xt",
      [](const EnergyStack& stack, const ScoreModel& model, const Vec& x_t,
         int t, const NoiseSchedule& sched, const std::string& mode) {
        JacobianMode jm = JacobianMode::kAuto;
        if (mode == "exact") jm = JacobianMode::kExact;
        else if (mode == "stop-through-x0") jm = JacobianMode::kStopThroughX0;
        else if (mode != "auto") throw std::invalid_argument("unknown jacobian mode");
        return guided_grad_wrt_xt(stack, model, x_t, t, sched, jm);
      },
      py::arg("stack"), py::arg("model"), py::arg("x_t"), py::arg("t"),
      py::arg("sched"), py::arg("mode") = "auto");

  m.def(
      "ddnm_update",
      [](const Mat& a, const Vec& y, const Vec& x0) {
        return ddnm_update(LinearOperator::from_matrix(a), y, x0);
      },
      py::arg("matrix"), py::arg("y"), py::arg("x0"));

  py::class_<GuidanceConfig>(m, "GuidanceConfig")
      .def(py::init(&make_config), py::arg("rho_mode") = "scaled-1m-abar",
           py::arg("rho_base") = 0.0, py::arg("travel_repeat") = 1,
           py::arg("stage_lo") = 0.3, py::arg("stage_hi") = 0.7,
           py::arg("ddim_steps") = 0, py::arg("eta_ddim") = 1.0,
           py::arg("jacobian_mode") = "auto", py::arg("sampler") = "ancestral",
           py::arg("record_trace") = true)
      .def_readwrite("rho_base", &GuidanceConfig::rho_base)
      .def_readwrite("travel_repeat", &GuidanceConfig::travel_repeat)
      .def_readwrite("stage_lo", &GuidanceConfig::stage_lo)
      .def_readwrite("stage_hi", &GuidanceConfig::stage_hi)
      .def_readwrite("ddim_steps", &GuidanceConfig::ddim_steps)
      .def_readwrite("eta_ddim", &GuidanceConfig::eta_ddim)
      .def_readwrite("record_trace", &GuidanceConfig::record_trace);

  py::class_<TraceRow>(m, "TraceRow")
      .def_readonly("step_index", &TraceRow::step_index)
      .def_readonly("t", &TraceRow::t)
      .def_readonly("repeat", &TraceRow::repeat)
      .def_readonly("energy", &TraceRow::energy)
      .def_readonly("grad_norm", &TraceRow::grad_norm)
      .def_readonly("x", &TraceRow::x)
      .def_readonly("x0", &TraceRow::x0);

  py::class_<SampleTrace>(m, "SampleTrace")
      .def_readonly("rows", &SampleTrace::rows)
      .def_readonly("seed", &SampleTrace::seed)
      .def_readonly("rng_algorithm", &SampleTrace::rng_algorithm)
      .def_readonly("rho_mode", &SampleTrace::rho_mode)
      .def_readonly("jacobian_mode", &SampleTrace::jacobian_mode)
      .def_readonly("sampler", &SampleTrace::sampler)
      .def_readonly("score_evals", &SampleTrace::score_evals)
      .def_readonly("energy_grad_evals", &SampleTrace::energy_grad_evals)
      .def_readonly("diverged", &SampleTrace::diverged);

  py::class_<RunResult>(m, "RunResult")
      .def_readonly("x0", &RunResult::x0)
      .def_readonly("trace", &RunResult::trace);

  auto wrap_sampler = [](RunResult (*fn)(const ScoreModel&, const EnergyStack*,
                                         const GuidanceConfig&,
                                         const NoiseSchedule&, std::uint64_t)) {
    return [fn](const ScoreModel& model, py::object stack,
                const GuidanceConfig& cfg, const NoiseSchedule& sched,
                std::uint64_t seed) {
      const EnergyStack* ptr =
          stack.is_none() ? nullptr : stack.cast<const EnergyStack*>();
      return fn(model, ptr, cfg, sched, seed);
    };
  };

  m.def("sample_guided", wrap_sampler(&sample_guided), py::arg("model"),
        py::arg("stack"), py::arg("cfg"), py::arg("sched"), py::arg("seed"));
  m.def("sample_time_travel", wrap_sampler(&sample_time_travel),
        py::arg("model"), py::arg("stack"), py::arg("cfg"), py::arg("sched"),
        py::arg("seed"));
  m.def("sample_ddim", wrap_sampler(&sample_ddim), py::arg("model"),
        py::arg("stack"), py::arg("cfg"), py::arg("sched"), py::arg("seed"));

  m.def(
      "estimate_x0",
      [](const ScoreModel& model, const Vec& x_t, int t, const NoiseSchedule& sched) {
        return estimate_x0(model, x_t, t, sched);
      },
      py::arg("model"), py::arg("x_t"), py::arg("t"), py::arg("sched"));

  m.def(
      "ancestral_step",
      [](const ScoreModel& model, const Vec& x_t, int t,
         const NoiseSchedule& sched, std::uint64_t seed) {
        GaussianStream stream(RngSpec{seed, static_cast<std::uint64_t>(StreamRole::kAncestral)});
        return ancestral_step(model, x_t, t, sched, stream);
      },
      py::arg("model"), py::arg("x_t"), py::arg("t"), py::arg("sched"),
      py::arg("seed"));

  m.def(
      "stage_partition",
      [](const GuidanceConfig& cfg, const NoiseSchedule& sched) {
        const StagePartition part = stage_partition(cfg, sched);
        return py::make_tuple(py::make_tuple(part.chaotic.lo, part.chaotic.hi),
                              py::make_tuple(part.semantic.lo, part.semantic.hi),
                              py::make_tuple(part.refinement.lo, part.refinement.hi));
      },
      py::arg("cfg"), py::arg("sched"));

  m.def("ddim_timesteps", &ddim_timesteps, py::arg("T"), py::arg("steps"));

  m.def(
      "rejection_sample",
      [](const ScoreModel& model, const EnergyStack& stack, double lambda_eff,
         int n, std::uint64_t seed) {
        GaussianStream rng(RngSpec{seed, static_cast<std::uint64_t>(StreamRole::kOracle)});
        const RejectionResult res =
            rejection_sample(OracleSampler{model, stack, lambda_eff}, n, rng);
        return py::make_tuple(res.samples, res.acceptance_rate);
      },
      py::arg("model"), py::arg("stack"), py::arg("lambda_eff"), py::arg("n"),
      py::arg("seed"));

  m.def("energy_distance", &energy_distance, py::arg("a"), py::arg("b"));
  m.def("standardized_energy_distance", &standardized_energy_distance,
        py::arg("a"), py::arg("b"));

  m.def(
      "two_sample_test",
      [](const SampleSet& a, const SampleSet& b, const std::string& metric,
         int permutations, std::uint64_t seed) {
        TwoSampleMetric tm = TwoSampleMetric::kEnergyDistance;
        if (metric == "mmd") tm = TwoSampleMetric::kMmd;
        else if (metric == "kolmogorov") tm = TwoSampleMetric::kKolmogorov;
        else if (metric != "energy-distance") {
          throw std::invalid_argument("unknown metric '" + metric + "'");
        }
        const TwoSampleReport rep = two_sample_test(a, b, tm, permutations, seed);
        py::dict out;
        out["metric"] = rep.metric;
        out["statistic"] = rep.statistic;
        out["p_value"] = rep.p_value;
        out["permutations"] = rep.permutations;
        out["degenerate"] = rep.degenerate;
        return out;
      },
      py::arg("a"), py::arg("b"), py::arg("metric") = "energy-distance",
      py::arg("permutations") = 500, py::arg("seed") = 0);

  m.def(
      "run_benchmark",
      [](const std::string& name, std::uint64_t seed, double budget) {
        const TaskVerdict v = run_benchmark(make_benchmark(name), seed, budget);
        py::dict out;
        out["name"] = v.name;
        out["pass"] = v.pass;
        out["metric"] = v.metric;
        out["detail"] = v.detail;
        return out;
      },
      py::arg("name"), py::arg("seed") = 1, py::arg("budget") = 1.0);
  m.def("benchmark_names", &benchmark_names);
}
