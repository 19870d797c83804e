#include "egdiff/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace egdiff {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  size_t pos = 0;
  const double v = std::stod(s, &pos);
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

Vec vec_from_json(const Json& j, const std::string& key) {
  if (!j.is_array()) {
    throw std::invalid_argument("config: '" + key + "' must be an array");
  }
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw std::invalid_argument("config: '" + key + "' must be numeric");
    }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Mat mat_from_json(const Json& j, const std::string& key) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw std::invalid_argument("config: '" + key + "' must be a matrix");
  }
  const size_t rows = j.size();
  const size_t cols = j[0].size();
  Mat m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) {
      throw std::invalid_argument("config: '" + key + "' rows differ in length");
    }
    for (size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          j[r][c].get<double>();
    }
  }
  return m;
}

Vec vec_or_csv(const Json& spec, const std::string& key) {
  if (spec.contains(key)) return vec_from_json(spec.at(key), key);
  const std::string csv_key = key + "_csv";
  if (spec.contains(csv_key)) {
    return load_csv_vector(spec.at(csv_key).get<std::string>());
  }
  throw std::invalid_argument("config: missing '" + key + "' (or '" + csv_key +
                              "')");
}

}  // namespace

std::uint64_t config_hash(const Json& config) {
  const std::string dump = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

Vec load_csv_vector(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv_vector: cannot open " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    }
    std::istringstream ss(line);
    double v;
    while (ss >> v) vals.push_back(v);
  }
  if (vals.empty()) {
    throw std::invalid_argument("load_csv_vector: no values in " + path);
  }
  Vec out(static_cast<Eigen::Index>(vals.size()));
  for (size_t i = 0; i < vals.size(); ++i) out[static_cast<Eigen::Index>(i)] = vals[i];
  return out;
}

ScoreModel model_from_json(const Json& spec) {
  if (!spec.contains("kind")) {
    throw std::invalid_argument("config: model requires 'kind'");
  }
  const std::string kind = spec.at("kind").get<std::string>();
  if (kind == "isotropic-gaussian") {
    return ScoreModel::isotropic_gaussian(vec_or_csv(spec, "mean"),
                                          spec.at("sigma").get<double>());
  }
  if (kind == "gaussian-mixture") {
    const Json& jm = spec.at("means");
    std::vector<Vec> means;
    for (size_t i = 0; i < jm.size(); ++i) {
      means.push_back(vec_from_json(jm[i], "means"));
    }
    std::vector<double> sigmas = spec.at("sigmas").get<std::vector<double>>();
    return ScoreModel::gaussian_mixture(std::move(means), std::move(sigmas),
                                        vec_from_json(spec.at("weights"), "weights"));
  }
  if (kind == "empirical") {
    std::vector<Vec> points;
    if (spec.contains("points")) {
      const Json& jp = spec.at("points");
      for (size_t i = 0; i < jp.size(); ++i) {
        points.push_back(vec_from_json(jp[i], "points"));
      }
    } else if (spec.contains("points_csv")) {
      // one point per CSV row
      std::ifstream in(spec.at("points_csv").get<std::string>());
      if (!in) throw std::invalid_argument("config: cannot open points_csv");
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        for (char& c : line) {
          if (c == ',' || c == ';' || c == '\t') c = ' ';
        }
        std::istringstream ss(line);
        std::vector<double> row;
        double v;
        while (ss >> v) row.push_back(v);
        if (row.empty()) continue;
        Vec p(static_cast<Eigen::Index>(row.size()));
        for (size_t i = 0; i < row.size(); ++i) p[static_cast<Eigen::Index>(i)] = row[i];
        points.push_back(std::move(p));
      }
    } else {
      throw std::invalid_argument("config: empirical model needs 'points'");
    }
    return ScoreModel::empirical(std::move(points));
  }
  throw std::invalid_argument("config: unknown model kind '" + kind + "'");
}

NoiseSchedule schedule_from_json(const Json& spec) {
  const int T = spec.value("T", 1000);
  const double beta_min = spec.value("beta_min", 1e-4);
  const double beta_max = spec.value("beta_max", 0.02);
  return make_linear_schedule(T, beta_min, beta_max);
}

EnergyTerm energy_term_from_json(const Json& spec, const ScoreModel& model) {
  const std::string kind = spec.at("kind").get<std::string>();
  if (kind == "l2-target") {
    Vec target = vec_or_csv(spec, "target");
    if (spec.contains("projection")) {
      return EnergyTerm::l2_target(mat_from_json(spec.at("projection"), "projection"),
                                   std::move(target));
    }
    return EnergyTerm::l2_target(std::move(target));
  }
  if (kind == "linear-measurement") {
    LinearOperator op =
        LinearOperator::from_matrix(mat_from_json(spec.at("matrix"), "matrix"));
    return EnergyTerm::linear_measurement(std::move(op), vec_or_csv(spec, "y"));
  }
  if (kind == "lowpass") {
    return EnergyTerm::lowpass(vec_or_csv(spec, "source"),
                               spec.value("factor", 2));
  }
  if (kind == "gram-style") {
    const Vec ref = vec_or_csv(spec, "reference");
    return EnergyTerm::gram_style(ref, static_cast<int>(ref.size()),
                                  spec.value("feature_seed", 12345ULL));
  }
  if (kind == "region-softmin") {
    return EnergyTerm::region(vec_or_csv(spec, "center"),
                              spec.at("radius").get<double>());
  }
  if (kind == "mixture-class") {
    const int component = spec.at("component").get<int>();
    if (spec.contains("means")) {
      const Json& jm = spec.at("means");
      std::vector<Vec> means;
      for (size_t i = 0; i < jm.size(); ++i) {
        means.push_back(vec_from_json(jm[i], "means"));
      }
      return EnergyTerm::mixture_class(
          std::move(means), spec.at("sigmas").get<std::vector<double>>(),
          vec_from_json(spec.at("weights"), "weights"), component);
    }
    return EnergyTerm::mixture_class(model, component);
  }
  throw std::invalid_argument("config: unknown energy kind '" + kind + "'");
}

EnergyStack stack_from_json(const Json& spec, const ScoreModel& model) {
  if (!spec.contains("terms") || !spec.at("terms").is_array() ||
      spec.at("terms").empty()) {
    throw std::invalid_argument("config: energy requires nonempty 'terms'");
  }
  std::vector<EnergyTerm> terms;
  for (const Json& t : spec.at("terms")) {
    terms.push_back(energy_term_from_json(t, model));
  }
  Vec weights;
  if (spec.contains("weights")) {
    weights = vec_from_json(spec.at("weights"), "weights");
  } else {
    weights = Vec::Ones(static_cast<Eigen::Index>(terms.size()));
  }
  return EnergyStack(std::move(terms), std::move(weights));
}

GuidanceConfig guidance_from_json(const Json& spec) {
  GuidanceConfig cfg;
  const std::string rho_mode = spec.value("rho_mode", "scaled-1m-abar");
  if (rho_mode == "constant") cfg.rho_mode = RhoSchedule::kConstant;
  else if (rho_mode == "scaled-1m-abar") cfg.rho_mode = RhoSchedule::kScaledOneMinusAlphaBar;
  else if (rho_mode == "grad-norm") cfg.rho_mode = RhoSchedule::kGradNormNormalized;
  else throw std::invalid_argument("config: unknown rho_mode '" + rho_mode + "'");

  cfg.rho_base = spec.value("rho_base", 0.0);
  cfg.travel_repeat = spec.value("travel_repeat", 1);
  cfg.stage_lo = spec.value("stage_lo", 0.3);
  cfg.stage_hi = spec.value("stage_hi", 0.7);
  if (spec.contains("ddim_steps")) {
    const Json& ds = spec.at("ddim_steps");
    cfg.ddim_steps = ds.is_string() ? 0 : ds.get<int>();  // "full" -> 0
  }
  cfg.eta_ddim = spec.value("eta_ddim", 1.0);

  const std::string jac = spec.value("jacobian_mode", "auto");
  if (jac == "auto") cfg.jacobian_mode = JacobianMode::kAuto;
  else if (jac == "exact") cfg.jacobian_mode = JacobianMode::kExact;
  else if (jac == "stop-through-x0") cfg.jacobian_mode = JacobianMode::kStopThroughX0;
  else throw std::invalid_argument("config: unknown jacobian_mode '" + jac + "'");

  const std::string sampler = spec.value("sampler", "ancestral");
  if (sampler == "ancestral") cfg.sampler = SamplerKind::kAncestral;
  else if (sampler == "time-travel") cfg.sampler = SamplerKind::kTimeTravel;
  else if (sampler == "ddim") cfg.sampler = SamplerKind::kDdim;
  else throw std::invalid_argument("config: unknown sampler '" + sampler + "'");

  cfg.record_trace = spec.value("record_trace", true);
  cfg.validate();
  return cfg;
}

Experiment load_experiment(const Json& config) {
  if (!config.is_object()) {
    throw std::invalid_argument("config: top level must be an object");
  }
  Experiment exp{config,
                 config_hash(config),
                 model_from_json(config.at("model")),
                 schedule_from_json(config.value("schedule", Json::object())),
                 std::nullopt,
                 GuidanceConfig{},
                 {},
                 {},
                 config.value("out_dir", std::string("out")),
                 config.value("trace_seeds", 2)};
  if (config.contains("energy")) {
    exp.stack = stack_from_json(config.at("energy"), exp.model);
  }
  const Json guidance_json = config.value("guidance", Json::object());
  exp.guidance = guidance_from_json(guidance_json);

  if (config.contains("seeds")) {
    const Json& js = config.at("seeds");
    if (js.is_array()) {
      for (const Json& s : js) exp.seeds.push_back(s.get<std::uint64_t>());
    } else if (js.is_object()) {
      const std::uint64_t base = js.value("base", 1ULL);
      const int count = js.value("count", 1);
      for (int i = 0; i < count; ++i) {
        exp.seeds.push_back(base + static_cast<std::uint64_t>(i));
      }
    } else {
      exp.seeds.push_back(js.get<std::uint64_t>());
    }
  } else {
    exp.seeds.push_back(1);
  }
  if (exp.seeds.empty()) {
    throw std::invalid_argument("config: 'seeds' resolves to an empty list");
  }

  if (config.contains("arms")) {
    for (const Json& arm : config.at("arms")) {
      const std::string name = arm.at("name").get<std::string>();
      Json merged = guidance_json;
      if (arm.contains("guidance")) {
        for (auto it = arm.at("guidance").begin(); it != arm.at("guidance").end(); ++it) {
          merged[it.key()] = it.value();
        }
      }
      exp.arms.emplace_back(name, guidance_from_json(merged));
    }
  }
  return exp;
}

Experiment load_experiment_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  Json config;
  try {
    in >> config;
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: JSON parse error in " + path + ": " +
                                e.what());
  }
  return load_experiment(config);
}

namespace {

std::string schedule_desc(const NoiseSchedule& sched) {
  return "T=" + std::to_string(sched.T) + " beta_1=" + fmt_double(sched.beta(1)) +
         " beta_T=" + fmt_double(sched.beta(sched.T));
}

void write_common_header(std::ofstream& out, std::uint64_t hash,
                         const SampleTrace& trace,
                         const std::string& sched_desc) {
  out << "# config_hash=" << hash_hex(hash) << "\n";
  out << "# rng=" << trace.rng_algorithm << "\n";
  out << "# seed=" << trace.seed << "\n";
  out << "# schedule=" << sched_desc << "\n";
  out << "# rho_mode=" << trace.rho_mode << "\n";
  out << "# jacobian=" << trace.jacobian_mode << "\n";
  out << "# sampler=" << trace.sampler << "\n";
}

}  // namespace

void export_trace(const SampleTrace& trace, const std::string& path,
                  std::uint64_t hash, const std::string& sched_desc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_trace: cannot write " + path);
  write_common_header(out, hash, trace, sched_desc);
  const int d = trace.rows.empty() ? 0 : static_cast<int>(trace.rows[0].x.size());
  out << "step_index,t,repeat,energy,grad_norm";
  for (int a = 0; a < d; ++a) out << ",x" << a;
  out << "\n";
  for (const TraceRow& row : trace.rows) {
    out << row.step_index << "," << row.t << "," << row.repeat << ","
        << fmt_double(row.energy) << "," << fmt_double(row.grad_norm);
    for (int a = 0; a < d; ++a) out << "," << fmt_double(row.x[a]);
    out << "\n";
  }
  if (!out) throw std::runtime_error("export_trace: write failed for " + path);
}

ParsedTrace parse_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_trace: cannot open " + path);
  ParsedTrace parsed;
  std::string line;
  bool header_seen = false;
  int d = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const size_t eq = line.find('=');
      if (eq != std::string::npos) {
        std::string key = line.substr(2, eq - 2);
        parsed.metadata[key] = line.substr(eq + 1);
      }
      continue;
    }
    if (!header_seen) {
      const auto cols = split(line, ',');
      if (cols.size() < 5 || cols[0] != "step_index") {
        throw std::runtime_error("parse_trace: unexpected header in " + path);
      }
      d = static_cast<int>(cols.size()) - 5;
      header_seen = true;
      continue;
    }
    const auto cols = split(line, ',');
    if (static_cast<int>(cols.size()) != 5 + d) {
      throw std::runtime_error("parse_trace: ragged row in " + path);
    }
    TraceRow row;
    row.step_index = std::stoi(cols[0]);
    row.t = std::stoi(cols[1]);
    row.repeat = std::stoi(cols[2]);
    row.energy = parse_double(cols[3]);
    row.grad_norm = parse_double(cols[4]);
    row.x.resize(d);
    for (int a = 0; a < d; ++a) row.x[a] = parse_double(cols[static_cast<size_t>(5 + a)]);
    parsed.trace.rows.push_back(std::move(row));
  }
  if (parsed.metadata.count("seed")) {
    parsed.trace.seed = std::stoull(parsed.metadata["seed"]);
  }
  if (parsed.metadata.count("rng")) {
    parsed.trace.rng_algorithm = parsed.metadata["rng"];
  }
  if (parsed.metadata.count("rho_mode")) parsed.trace.rho_mode = parsed.metadata["rho_mode"];
  if (parsed.metadata.count("jacobian")) parsed.trace.jacobian_mode = parsed.metadata["jacobian"];
  if (parsed.metadata.count("sampler")) parsed.trace.sampler = parsed.metadata["sampler"];
  return parsed;
}

ExperimentSummary run_experiment(const Experiment& exp, bool write_files) {
  ExperimentSummary summary;
  const EnergyStack* stack = exp.stack ? &*exp.stack : nullptr;

  std::vector<std::pair<std::string, GuidanceConfig>> arms = exp.arms;
  if (arms.empty()) arms.emplace_back("default", exp.guidance);

  if (write_files) fs::create_directories(exp.out_dir);

  for (const auto& [name, cfg] : arms) {
    ArmSummary arm;
    arm.name = name;
    arm.samples.resize(static_cast<Eigen::Index>(exp.seeds.size()),
                       exp.model.dim());
    const std::string arm_dir = exp.out_dir + "/" + name;
    if (write_files) fs::create_directories(arm_dir);

    int traced = 0;
    for (size_t i = 0; i < exp.seeds.size(); ++i) {
      const std::uint64_t seed = exp.seeds[i];
      GuidanceConfig run_cfg = cfg;
      run_cfg.record_trace = write_files && traced < exp.trace_seeds;
      const RunResult run = run_sampler(exp.model, stack, run_cfg, exp.sched, seed);
      if (run.trace.diverged) {
        throw std::runtime_error("run_experiment: run diverged at t=" +
                                 std::to_string(run.trace.diverged_at_t) +
                                 " (seed " + std::to_string(seed) + ")");
      }
      arm.samples.row(static_cast<Eigen::Index>(i)) = run.x0.transpose();
      arm.final_energies.push_back(stack ? stack->value(run.x0) : 0.0);
      arm.score_evals.push_back(run.trace.score_evals);
      if (run_cfg.record_trace) {
        const std::string tpath = arm_dir + "/trace_" + std::to_string(seed) + ".csv";
        export_trace(run.trace, tpath, exp.hash, schedule_desc(exp.sched));
        summary.files_written.push_back(tpath);
        ++traced;
      }
    }

    double mean = 0.0;
    for (double e : arm.final_energies) mean += e;
    mean /= static_cast<double>(arm.final_energies.size());
    double var = 0.0;
    for (double e : arm.final_energies) var += (e - mean) * (e - mean);
    arm.mean_energy = mean;
    arm.stddev_energy = arm.final_energies.size() > 1
                            ? std::sqrt(var / (arm.final_energies.size() - 1))
                            : 0.0;
    double evals = 0.0;
    for (long v : arm.score_evals) evals += static_cast<double>(v);
    arm.mean_score_evals = evals / static_cast<double>(arm.score_evals.size());

    if (write_files) {
      const std::string spath = arm_dir + "/samples.csv";
      std::ofstream out(spath);
      out << "# config_hash=" << hash_hex(exp.hash) << "\n";
      out << "# arm=" << name << "\n";
      out << "# rng=" << kRngAlgorithm << "\n";
      out << "# schedule=" << schedule_desc(exp.sched) << "\n";
      out << "# rho_mode=" << rho_schedule_name(cfg.rho_mode)
          << " rho_base=" << fmt_double(cfg.rho_base) << "\n";
      out << "# jacobian="
          << jacobian_mode_name(resolve_jacobian_mode(cfg.jacobian_mode,
                                                      exp.model.dim()))
          << "\n";
      out << "# sampler=" << sampler_kind_name(cfg.sampler) << "\n";
      out << "seed,energy,score_evals";
      for (int a = 0; a < exp.model.dim(); ++a) out << ",x" << a;
      out << "\n";
      for (size_t i = 0; i < exp.seeds.size(); ++i) {
        out << exp.seeds[i] << "," << fmt_double(arm.final_energies[i]) << ","
            << arm.score_evals[i];
        for (int a = 0; a < exp.model.dim(); ++a) {
          out << "," << fmt_double(arm.samples(static_cast<Eigen::Index>(i), a));
        }
        out << "\n";
      }
      summary.files_written.push_back(spath);
    }
    summary.arms.push_back(std::move(arm));
  }

  for (size_t i = 0; i < summary.arms.size(); ++i) {
    for (size_t j = i + 1; j < summary.arms.size(); ++j) {
      const auto& a = summary.arms[i];
      const auto& b = summary.arms[j];
      std::vector<double> diffs(a.final_energies.size());
      for (size_t s = 0; s < diffs.size(); ++s) {
        diffs[s] = b.final_energies[s] - a.final_energies[s];
      }
      const double p = paired_sign_flip_pvalue(diffs, 10000, exp.hash);
      const std::string key = a.name + "-vs-" + b.name;
      summary.paired_pvalues[key] = p;
      if (write_files) {
        const std::string ppath = exp.out_dir + "/paired_" + a.name + "_vs_" +
                                  b.name + ".csv";
        std::ofstream out(ppath);
        out << "# config_hash=" << hash_hex(exp.hash) << "\n";
        out << "# paired_sign_flip_pvalue=" << fmt_double(p) << "\n";
        out << "seed,energy_" << a.name << ",energy_" << b.name << ",delta\n";
        for (size_t s = 0; s < diffs.size(); ++s) {
          out << exp.seeds[s] << "," << fmt_double(a.final_energies[s]) << ","
              << fmt_double(b.final_energies[s]) << "," << fmt_double(diffs[s])
              << "\n";
        }
        summary.files_written.push_back(ppath);
      }
    }
  }

  if (write_files) {
    const std::string sumpath = exp.out_dir + "/summary.csv";
    std::ofstream out(sumpath);
    out << "# config_hash=" << hash_hex(exp.hash) << "\n";
    out << "# rng=" << kRngAlgorithm << "\n";
    out << "# schedule=" << schedule_desc(exp.sched) << "\n";
    out << "arm,n_seeds,mean_energy,stddev_energy,mean_score_evals\n";
    for (const ArmSummary& arm : summary.arms) {
      out << arm.name << "," << arm.final_energies.size() << ","
          << fmt_double(arm.mean_energy) << "," << fmt_double(arm.stddev_energy)
          << "," << fmt_double(arm.mean_score_evals) << "\n";
    }
    for (const auto& [key, p] : summary.paired_pvalues) {
      out << "# paired " << key << " p=" << fmt_double(p) << "\n";
    }
    summary.files_written.push_back(sumpath);
  }
  return summary;
}

// ---- rendering -----------------------------------------------------------

namespace {

GrayImage finalize_image(const std::vector<double>& acc, const ImageSpec& spec) {
  GrayImage img;
  img.width = spec.width;
  img.height = spec.height;
  img.pixels.resize(acc.size());
  double peak = 0.0;
  for (double v : acc) peak = std::max(peak, spec.log_scale ? std::log1p(v) : v);
  for (size_t i = 0; i < acc.size(); ++i) {
    const double v = spec.log_scale ? std::log1p(acc[i]) : acc[i];
    img.pixels[i] = peak > 0.0
                        ? static_cast<std::uint8_t>(std::lround(255.0 * v / peak))
                        : 0;
  }
  return img;
}

void check_image_spec(const ImageSpec& spec) {
  if (spec.width < 1 || spec.height < 1 || spec.lo.size() != 2 ||
      spec.hi.size() != 2 || !(spec.hi[0] > spec.lo[0]) ||
      !(spec.hi[1] > spec.lo[1])) {
    throw std::invalid_argument("render_density: invalid image spec");
  }
}

}  // namespace

GrayImage render_density(const SampleSet& points, const ImageSpec& spec) {
  check_image_spec(spec);
  if (points.cols() != 2) {
    throw std::invalid_argument("render_density: requires 2-D data");
  }
  std::vector<double> acc(static_cast<size_t>(spec.width) * spec.height, 0.0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double fx = (points(i, 0) - spec.lo[0]) / (spec.hi[0] - spec.lo[0]);
    const double fy = (points(i, 1) - spec.lo[1]) / (spec.hi[1] - spec.lo[1]);
    if (fx < 0.0 || fx >= 1.0 || fy < 0.0 || fy >= 1.0) continue;
    const int px = std::min(spec.width - 1, static_cast<int>(fx * spec.width));
    const int py = std::min(spec.height - 1, static_cast<int>(fy * spec.height));
    const int row = spec.height - 1 - py;  // row 0 at the top
    acc[static_cast<size_t>(row) * spec.width + px] += 1.0;
  }
  return finalize_image(acc, spec);
}

GrayImage render_density(const GridTable& table, const ImageSpec& spec) {
  check_image_spec(spec);
  if (table.dim() != 2) {
    throw std::invalid_argument("render_density: requires a 2-D grid table");
  }
  std::vector<double> acc(static_cast<size_t>(spec.width) * spec.height, 0.0);
  const long cells = table.cells();
  for (long i = 0; i < cells; ++i) {
    const Vec c = table.center(i);
    const double fx = (c[0] - spec.lo[0]) / (spec.hi[0] - spec.lo[0]);
    const double fy = (c[1] - spec.lo[1]) / (spec.hi[1] - spec.lo[1]);
    if (fx < 0.0 || fx >= 1.0 || fy < 0.0 || fy >= 1.0) continue;
    const int px = std::min(spec.width - 1, static_cast<int>(fx * spec.width));
    const int py = std::min(spec.height - 1, static_cast<int>(fy * spec.height));
    const int row = spec.height - 1 - py;
    acc[static_cast<size_t>(row) * spec.width + px] +=
        table.values[static_cast<size_t>(i)] * table.cell_volume;
  }
  return finalize_image(acc, spec);
}

void write_pgm(const GrayImage& img, const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("write_pgm: cannot write " + path);
  if (binary) {
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
  } else {
    out << "P2\n" << img.width << " " << img.height << "\n255\n";
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) {
        if (c) out << ' ';
        out << static_cast<int>(img.pixels[static_cast<size_t>(r) * img.width + c]);
      }
      out << '\n';
    }
  }
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") {
    throw std::runtime_error("read_pgm: not a PGM file: " + path);
  }
  int w = 0, h = 0, maxv = 0;
  in >> w >> h >> maxv;
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  } else {
    for (auto& p : img.pixels) {
      int v;
      in >> v;
      p = static_cast<std::uint8_t>(v);
    }
  }
  return img;
}

double pixel_correlation(const GrayImage& a, const GrayImage& b) {
  if (a.pixels.size() != b.pixels.size() || a.pixels.empty()) {
    throw std::invalid_argument("pixel_correlation: image size mismatch");
  }
  const size_t n = a.pixels.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a.pixels[i] - ma;
    const double db = b.pixels[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---- benchmark registry ----------------------------------------------------

std::vector<std::string> benchmark_names() {
  return {"gauss-quadratic", "gmm-class", "bimodal-steer", "linear-inverse",
          "two-cond"};
}

namespace {

ScoreModel three_component_model() {
  std::vector<Vec> means;
  means.push_back((Vec(2) << -2.5, 0.0).finished());
  means.push_back((Vec(2) << 2.5, 1.5).finished());
  means.push_back((Vec(2) << 0.0, -2.5).finished());
  Vec w(3);
  w << 0.5, 0.3, 0.2;
  return ScoreModel::gaussian_mixture(std::move(means), {0.7, 0.7, 0.7}, w);
}

ScoreModel bimodal_model() {
  std::vector<Vec> means;
  means.push_back((Vec(2) << -3.0, 0.0).finished());
  means.push_back((Vec(2) << 3.0, 0.0).finished());
  Vec w(2);
  w << 0.85, 0.15;
  return ScoreModel::gaussian_mixture(std::move(means), {0.6, 0.6}, w);
}

}  // namespace

BenchmarkTask make_benchmark(const std::string& name) {
  const NoiseSchedule sched = make_linear_schedule(1000, 1e-4, 0.02);
  if (name == "gauss-quadratic") {
    ScoreModel model = ScoreModel::isotropic_gaussian(Vec::Zero(2), 1.0);
    EnergyStack stack(EnergyTerm::l2_target((Vec(2) << 1.0, -0.5).finished()));
    GuidanceConfig cfg;
    cfg.rho_mode = RhoSchedule::kScaledOneMinusAlphaBar;
    cfg.jacobian_mode = JacobianMode::kExact;
    return BenchmarkTask{name,
                         "Gaussian base with a quadratic target energy; "
                         "closed-form tempered posterior",
                         std::move(model),
                         sched,
                         std::move(stack),
                         cfg,
                         TaskOracle::kGridCalibrated,
                         2.0,
                         0.05,
                         2000};
  }
  if (name == "gmm-class") {
    ScoreModel model = three_component_model();
    EnergyStack stack(EnergyTerm::mixture_class(model, 1));
    GuidanceConfig cfg;
    cfg.rho_mode = RhoSchedule::kScaledOneMinusAlphaBar;
    cfg.jacobian_mode = JacobianMode::kExact;
    return BenchmarkTask{name,
                         "2-D mixture steered to one component; rejection "
                         "oracle on the tempered posterior",
                         std::move(model),
                         sched,
                         std::move(stack),
                         cfg,
                         TaskOracle::kRejectionCalibrated,
                         1.0,
                         0.05,
                         2000};
  }
  if (name == "bimodal-steer") {
    ScoreModel model = bimodal_model();
    EnergyStack stack(EnergyTerm::mixture_class(model, 1));
    GuidanceConfig cfg;
    cfg.rho_mode = RhoSchedule::kScaledOneMinusAlphaBar;
    cfg.rho_base = 0.05;
    cfg.travel_repeat = 3;
    cfg.stage_lo = 0.3;
    cfg.stage_hi = 0.7;
    cfg.jacobian_mode = JacobianMode::kExact;
    return BenchmarkTask{name,
                         "Hard bimodal steering toward the minor mode; "
                         "paired travel-vs-plain comparison",
                         std::move(model),
                         sched,
                         std::move(stack),
                         cfg,
                         TaskOracle::kPairedTravel,
                         0.0,
                         0.05,
                         200};
  }
  if (name == "linear-inverse") {
    ScoreModel model = ScoreModel::isotropic_gaussian(Vec::Zero(2), 1.0);
    Mat a(1, 2);
    a << 1.0, 0.0;
    Vec y(1);
    y << 0.7;
    EnergyStack stack(
        EnergyTerm::linear_measurement(LinearOperator::from_matrix(a), y));
    GuidanceConfig cfg;
    cfg.rho_mode = RhoSchedule::kConstant;
    cfg.rho_base = 0.4;
    cfg.jacobian_mode = JacobianMode::kExact;
    return BenchmarkTask{name,
                         "Inpainting-style linear inverse problem; residual "
                         "threshold on guided runs",
                         std::move(model),
                         sched,
                         std::move(stack),
                         cfg,
                         TaskOracle::kResidual,
                         0.0,
                         1e-2,
                         200};
  }
  if (name == "two-cond") {
    ScoreModel model = three_component_model();
    std::vector<EnergyTerm> terms;
    terms.push_back(EnergyTerm::mixture_class(model, 1));
    terms.push_back(EnergyTerm::region((Vec(2) << 2.5, 1.5).finished(), 0.8));
    Vec weights(2);
    weights << 1.0, 1.0;
    EnergyStack stack(std::move(terms), weights);
    GuidanceConfig cfg;
    cfg.rho_mode = RhoSchedule::kScaledOneMinusAlphaBar;
    cfg.rho_base = 2.0;
    cfg.jacobian_mode = JacobianMode::kExact;
    return BenchmarkTask{name,
                         "Class plus region steering; both conditions must "
                         "be reached together",
                         std::move(model),
                         sched,
                         std::move(stack),
                         cfg,
                         TaskOracle::kTwoCondition,
                         1.0,
                         0.8,
                         200};
  }
  throw std::invalid_argument("make_benchmark: unknown task '" + name + "'");
}

TaskVerdict run_benchmark(const BenchmarkTask& task, std::uint64_t seed,
                          double budget_scale) {
  TaskVerdict verdict;
  verdict.name = task.name;
  const int n_seeds = std::max(
      20, static_cast<int>(std::lround(task.n_seeds * budget_scale)));

  switch (task.oracle) {
    case TaskOracle::kGridCalibrated:
    case TaskOracle::kRejectionCalibrated: {
      CalibrationOptions copts;
      copts.cfg = task.guidance;
      copts.seed = seed;
      copts.n_final = n_seeds;
      copts.n_calibration = std::max(200, n_seeds / 5);
      const CalibrationResult cal =
          calibrate_rho(task.model, *task.stack, task.sched, task.lambda_eff, copts);
      double distance = cal.achieved_distance;
      if (task.oracle == TaskOracle::kRejectionCalibrated) {
        OracleSampler oracle{task.model, *task.stack, task.lambda_eff};
        GaussianStream rng(RngSpec{seed + 5, static_cast<std::uint64_t>(StreamRole::kOracle)});
        const RejectionResult rej = rejection_sample(oracle, n_seeds, rng);
        GuidanceConfig cfg = task.guidance;
        cfg.rho_base = cal.rho;
        const SampleSet guided =
            sample_batch(task.model, &*task.stack, cfg, task.sched, seed + 31, n_seeds);
        distance = standardized_energy_distance(guided, rej.samples);
      }
      verdict.metric = distance;
      verdict.pass = distance < task.threshold;
      verdict.detail = "calibrated rho=" + fmt_double(cal.rho) +
                       " energy_distance=" + fmt_double(distance) +
                       " threshold=" + fmt_double(task.threshold);
      return verdict;
    }
    case TaskOracle::kResidual: {
      const EnergyTerm& term = task.stack->terms()[0];
      const LinearOperator& op = *term.op();
      const Vec& y = term.target();
      int ok = 0;
      for (int s = 0; s < n_seeds; ++s) {
        const RunResult run = run_sampler(task.model, &*task.stack, task.guidance,
                                          task.sched, seed + static_cast<std::uint64_t>(s));
        if (!run.trace.diverged && (op.A * run.x0 - y).norm() < task.threshold) ++ok;
      }
      const double rate = static_cast<double>(ok) / n_seeds;
      verdict.metric = rate;
      verdict.pass = rate >= 0.95;
      verdict.detail = "residual<" + fmt_double(task.threshold) + " in " +
                       fmt_double(100.0 * rate) + "% of " +
                       std::to_string(n_seeds) + " seeds";
      return verdict;
    }
    case TaskOracle::kPairedTravel: {
      GuidanceConfig plain = task.guidance;
      plain.sampler = SamplerKind::kAncestral;
      plain.travel_repeat = 1;
      GuidanceConfig travel = task.guidance;
      travel.sampler = SamplerKind::kTimeTravel;
      GuidanceConfig travel_all = travel;
      travel_all.stage_lo = 0.0;
      travel_all.stage_hi = 1.0;

      std::vector<double> e_plain, e_travel, e_all;
      long evals_travel = 0, evals_all = 0;
      for (int s = 0; s < n_seeds; ++s) {
        const std::uint64_t rs = seed + static_cast<std::uint64_t>(s);
        auto run_one = [&](const GuidanceConfig& cfg) {
          GuidanceConfig quiet = cfg;
          quiet.record_trace = false;
          return run_sampler(task.model, &*task.stack, quiet, task.sched, rs);
        };
        const RunResult rp = run_one(plain);
        const RunResult rt = run_one(travel);
        const RunResult ra = run_one(travel_all);
        e_plain.push_back(task.stack->value(rp.x0));
        e_travel.push_back(task.stack->value(rt.x0));
        e_all.push_back(task.stack->value(ra.x0));
        evals_travel += rt.trace.score_evals;
        evals_all += ra.trace.score_evals;
      }
      std::vector<double> d_tp(e_plain.size()), d_ta(e_plain.size());
      double mean_plain = 0.0, mean_travel = 0.0;
      for (size_t i = 0; i < e_plain.size(); ++i) {
        d_tp[i] = e_travel[i] - e_plain[i];
        d_ta[i] = e_travel[i] - e_all[i];
        mean_plain += e_plain[i];
        mean_travel += e_travel[i];
      }
      mean_plain /= static_cast<double>(e_plain.size());
      mean_travel /= static_cast<double>(e_travel.size());

      const double p_better = paired_sign_flip_pvalue_less(d_tp, 10000, seed);
      const double p_same = paired_sign_flip_pvalue(d_ta, 10000, seed + 1);
      const double savings =
          1.0 - static_cast<double>(evals_travel) / static_cast<double>(evals_all);

      const bool improves = mean_travel < mean_plain && p_better < 0.05;
      const bool matches = p_same > 0.05;
      const bool cheap = 10 * (evals_all - evals_travel) >= 4 * evals_all;
      verdict.metric = p_better;
      verdict.pass = improves && matches && cheap;
      verdict.detail = "mean plain=" + fmt_double(mean_plain) +
                       " travel=" + fmt_double(mean_travel) +
                       " p_improve=" + fmt_double(p_better) +
                       " p_semantic_vs_all=" + fmt_double(p_same) +
                       " eval_savings=" + fmt_double(savings);
      return verdict;
    }
    case TaskOracle::kTwoCondition: {
      const EnergyStack& stack = *task.stack;
      EnergyStack only_class(stack.terms()[0]);
      EnergyStack only_region(stack.terms()[1]);

      std::vector<double> class_single, region_single;
      std::vector<double> class_joint, region_joint;
      for (int s = 0; s < n_seeds; ++s) {
        const std::uint64_t rs = seed + static_cast<std::uint64_t>(s);
        GuidanceConfig quiet = task.guidance;
        quiet.record_trace = false;
        const RunResult rc = run_sampler(task.model, &only_class, quiet, task.sched, rs);
        const RunResult rr = run_sampler(task.model, &only_region, quiet, task.sched, rs);
        const RunResult rj = run_sampler(task.model, &stack, quiet, task.sched, rs);
        class_single.push_back(only_class.value(rc.x0));
        region_single.push_back(only_region.value(rr.x0));
        class_joint.push_back(stack.terms()[0].value(rj.x0));
        region_joint.push_back(stack.terms()[1].value(rj.x0));
      }
      auto p90 = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[static_cast<size_t>(0.9 * (v.size() - 1))];
      };
      const double class_bar = p90(class_single);
      const double region_bar = p90(region_single);
      int both = 0;
      for (size_t i = 0; i < class_joint.size(); ++i) {
        if (class_joint[i] < class_bar && region_joint[i] < region_bar) ++both;
      }
      const double rate = static_cast<double>(both) / class_joint.size();
      verdict.metric = rate;
      verdict.pass = rate >= task.threshold;
      verdict.detail = "both-conditions rate=" + fmt_double(rate) +
                       " (class p90=" + fmt_double(class_bar) +
                       ", region p90=" + fmt_double(region_bar) + ")";
      return verdict;
    }
  }
  throw std::logic_error("run_benchmark: unknown oracle kind");
}

}  // namespace egdiff
