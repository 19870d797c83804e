#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "egdiff/harness.hpp"

namespace {

using namespace egdiff;

int cmd_run(const std::string& config_path, const std::string& task_name,
            std::uint64_t seed, const std::string& out_dir, double budget) {
  if (!task_name.empty()) {
    const BenchmarkTask task = make_benchmark(task_name);
    const TaskVerdict verdict = run_benchmark(task, seed, budget);
    std::printf("[%s] %s: %s\n", verdict.pass ? "PASS" : "FAIL",
                verdict.name.c_str(), verdict.detail.c_str());
    return verdict.pass ? 0 : 1;
  }
  Experiment exp = load_experiment_file(config_path);
  if (!out_dir.empty()) exp.out_dir = out_dir;
  const ExperimentSummary summary = run_experiment(exp);
  for (const ArmSummary& arm : summary.arms) {
    std::printf("arm %-12s n=%zu mean_energy=%.6g stddev=%.6g score_evals=%.0f\n",
                arm.name.c_str(), arm.final_energies.size(), arm.mean_energy,
                arm.stddev_energy, arm.mean_score_evals);
  }
  for (const auto& [key, p] : summary.paired_pvalues) {
    std::printf("paired %s p=%.4g\n", key.c_str(), p);
  }
  std::printf("wrote %zu files under %s\n", summary.files_written.size(),
              exp.out_dir.c_str());
  return 0;
}

int cmd_verify(std::uint64_t seed, double budget) {
  bool all_pass = true;
  for (const std::string& name : benchmark_names()) {
    const BenchmarkTask task = make_benchmark(name);
    const TaskVerdict verdict = run_benchmark(task, seed, budget);
    std::printf("[%s] %s: %s\n", verdict.pass ? "PASS" : "FAIL",
                verdict.name.c_str(), verdict.detail.c_str());
    all_pass = all_pass && verdict.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_compare(const std::string& config_path, const std::string& out_dir) {
  Experiment exp = load_experiment_file(config_path);
  if (!out_dir.empty()) exp.out_dir = out_dir;
  if (exp.arms.size() < 2) {
    std::fprintf(stderr, "compare: config needs >= 2 arms\n");
    return 2;
  }
  const ExperimentSummary summary = run_experiment(exp);
  for (const ArmSummary& arm : summary.arms) {
    std::printf("arm %-12s mean_energy=%.6g stddev=%.6g score_evals=%.0f\n",
                arm.name.c_str(), arm.mean_energy, arm.stddev_energy,
                arm.mean_score_evals);
  }
  for (const auto& [key, p] : summary.paired_pvalues) {
    std::printf("paired %s p=%.4g\n", key.c_str(), p);
  }
  return 0;
}

int cmd_render(const std::string& config_path, const std::string& out_path,
               int size, bool log_scale, bool binary) {
  Experiment exp = load_experiment_file(config_path);
  if (exp.model.dim() != 2) {
    std::fprintf(stderr, "render: requires a 2-D model\n");
    return 2;
  }
  const ExperimentSummary summary = run_experiment(exp, false);
  const SampleSet& samples = summary.arms.front().samples;
  ImageSpec spec;
  spec.width = size;
  spec.height = size;
  spec.log_scale = log_scale;
  spec.lo = samples.colwise().minCoeff().transpose();
  spec.hi = samples.colwise().maxCoeff().transpose();
  // pad so the extreme samples stay inside the raster
  const Vec pad = 0.05 * (spec.hi - spec.lo).cwiseMax(1e-6);
  spec.lo -= pad;
  spec.hi += pad;
  const GrayImage img = render_density(samples, spec);
  write_pgm(img, out_path, binary);
  std::printf("wrote %s (%dx%d, %zu samples)\n", out_path.c_str(), img.width,
              img.height, static_cast<size_t>(samples.rows()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-guided diffusion sampling on analytic score models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string task_name;
  std::string out_dir;
  std::uint64_t seed = 1;
  double budget = 1.0;

  auto* run = app.add_subcommand("run", "Run an experiment config or a registered task");
  run->add_option("--config", config_path, "JSON experiment config");
  run->add_option("--task", task_name, "registered benchmark task name");
  run->add_option("--seed", seed, "base seed");
  run->add_option("--out", out_dir, "output directory override");
  run->add_option("--budget", budget, "seed-count scale in (0,1]");

  auto* verify = app.add_subcommand("verify", "Run the oracle suites for every registered task");
  verify->add_option("--seed", seed, "base seed");
  verify->add_option("--budget", budget, "seed-count scale in (0,1]");

  auto* compare = app.add_subcommand("compare", "Run paired comparison arms from a config");
  compare->add_option("--config", config_path, "JSON experiment config")->required();
  compare->add_option("--out", out_dir, "output directory override");

  std::string render_out = "density.pgm";
  int render_size = 128;
  bool render_log = false;
  bool render_binary = false;
  auto* render = app.add_subcommand("render", "Render a sample density raster (PGM)");
  render->add_option("--config", config_path, "JSON experiment config")->required();
  render->add_option("--out", render_out, "output PGM path");
  render->add_option("--size", render_size, "raster width/height");
  render->add_flag("--log", render_log, "log intensity mapping");
  render->add_flag("--binary", render_binary, "write P5 instead of P2");

  try {
    app.parse(argc, argv);
    if (run->parsed()) {
      if (config_path.empty() && task_name.empty()) {
        std::fprintf(stderr, "run: need --config or --task\n");
        return 2;
      }
      return cmd_run(config_path, task_name, seed, out_dir, budget);
    }
    if (verify->parsed()) return cmd_verify(seed, budget);
    if (compare->parsed()) return cmd_compare(config_path, out_dir);
    if (render->parsed()) {
      return cmd_render(config_path, render_out, render_size, render_log,
                        render_binary);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
