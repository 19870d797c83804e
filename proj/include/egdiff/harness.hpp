#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "egdiff/oracle.hpp"

namespace egdiff {

using Json = nlohmann::json;

/// FNV-1a over the canonical (sorted-key) JSON dump; embedded in every
/// output file header.
std::uint64_t config_hash(const Json& config);
std::string hash_hex(std::uint64_t hash);

// Structured-config parsers. All throw std::invalid_argument naming the
// offending key on bad input.
ScoreModel model_from_json(const Json& spec);
NoiseSchedule schedule_from_json(const Json& spec);
EnergyTerm energy_term_from_json(const Json& spec, const ScoreModel& model);
EnergyStack stack_from_json(const Json& spec, const ScoreModel& model);
GuidanceConfig guidance_from_json(const Json& spec);
Vec load_csv_vector(const std::string& path);

/// One experiment: model, schedule, optional energy stack, a base guidance
/// config, seeds, and optional comparison arms (guidance overrides).
struct Experiment {
  Json raw;
  std::uint64_t hash = 0;
  ScoreModel model;
  NoiseSchedule sched;
  std::optional<EnergyStack> stack;
  GuidanceConfig guidance;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, GuidanceConfig>> arms;
  std::string out_dir;
  int trace_seeds = 2;  // per-seed trace files written for the first k seeds
};

Experiment load_experiment(const Json& config);
Experiment load_experiment_file(const std::string& path);

struct ArmSummary {
  std::string name;
  std::vector<double> final_energies;  // per seed, stack energy at x0
  std::vector<long> score_evals;
  double mean_energy = 0.0;
  double stddev_energy = 0.0;
  double mean_score_evals = 0.0;
  SampleSet samples;
};

struct ExperimentSummary {
  std::vector<ArmSummary> arms;
  // Paired sign-flip p-values keyed "armA-vs-armB" (two-sided on energy).
  std::map<std::string, double> paired_pvalues;
  std::vector<std::string> files_written;
};

/// Runs every arm over every seed, deterministically; writes per-seed
/// traces, final samples, and a summary when write_files is set.
ExperimentSummary run_experiment(const Experiment& exp, bool write_files = true);

/// Trace CSV export with the fixed header
/// `step_index,t,repeat,energy,grad_norm,x...`; `#`-prefixed comment lines
/// carry the config hash, RNG identifier, seed and modes. Doubles print
/// with 17 significant digits so a re-parse is exact.
void export_trace(const SampleTrace& trace, const std::string& path,
                  std::uint64_t hash, const std::string& schedule_desc);

struct ParsedTrace {
  SampleTrace trace;
  std::map<std::string, std::string> metadata;
};

ParsedTrace parse_trace(const std::string& path);

// ---- density rendering -------------------------------------------------

struct ImageSpec {
  int width = 128;
  int height = 128;
  Vec lo;  // 2-vector, data-space bounds
  Vec hi;
  bool log_scale = false;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, row 0 at hi[1]
};

GrayImage render_density(const SampleSet& points, const ImageSpec& spec);
GrayImage render_density(const GridTable& table, const ImageSpec& spec);

/// Plain (P2) or raw (P5) portable graymap.
void write_pgm(const GrayImage& img, const std::string& path,
               bool binary = false);
GrayImage read_pgm(const std::string& path);

double pixel_correlation(const GrayImage& a, const GrayImage& b);

// ---- benchmark registry --------------------------------------------------

enum class TaskOracle { kGridCalibrated, kRejectionCalibrated, kResidual,
                        kPairedTravel, kTwoCondition };

struct BenchmarkTask {
  std::string name;
  std::string description;
  ScoreModel model;
  NoiseSchedule sched;
  std::optional<EnergyStack> stack;
  GuidanceConfig guidance;
  TaskOracle oracle;
  double lambda_eff = 1.0;
  double threshold = 0.0;
  int n_seeds = 200;
};

struct TaskVerdict {
  std::string name;
  bool pass = false;
  double metric = 0.0;
  std::string detail;
};

std::vector<std::string> benchmark_names();
BenchmarkTask make_benchmark(const std::string& name);

/// Runs a registered task against its oracle at its thresholds.
/// budget_scale in (0,1] shrinks seed counts for smoke runs.
TaskVerdict run_benchmark(const BenchmarkTask& task, std::uint64_t seed,
                          double budget_scale = 1.0);

}  // namespace egdiff
