/// @file cli.hpp
/// @brief Command-line front end: config loading, experiment orchestration,
///        artifact emission (CSV, SVG, manifest). Single-threaded itself; the
///        experiment driver fans out over worker threads.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "snse/config.hpp"
#include "snse/harness.hpp"

namespace snse {

struct RunConfig {
  std::string command;
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int workers = 1;
};

namespace cli_detail {

inline int log_level() {
  const char* v = std::getenv("SNSE_LOG");
  return v ? std::atoi(v) : 0;
}

inline void log(int level, const std::string& msg) {
  if (log_level() >= level) std::cerr << msg << "\n";
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline Config load_config(const RunConfig& rc) {
  Config cfg;
  if (!rc.config_path.empty()) {
    std::ifstream in(rc.config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + rc.config_path);
    cfg = parse_config(in);
  }
  if (rc.seed) cfg.experiment.seed = *rc.seed;
  return cfg;
}

inline ExperimentPlan plan_from(const Config& cfg) {
  ExperimentPlan plan = make_plan(cfg.experiment.levels, cfg.scheme.T,
                                  cfg.experiment.tau_scale, cfg.experiment.ref_time_factor);
  plan.samples = cfg.experiment.samples;
  plan.master_seed = cfg.experiment.seed;
  plan.alpha = cfg.experiment.alpha;
  plan.beta = cfg.experiment.beta;
  plan.xi_grid = cfg.experiment.xi;
  plan.stop_quantile = cfg.experiment.stop_quantile;
  return plan;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline void write_manifest(const RunConfig& rc, const Config& cfg,
                           const std::vector<std::string>& artifacts) {
  nlohmann::json m;
  m["command"] = rc.command;
  m["config_hash"] = fnv1a_hex(serialize_config(cfg));
  m["seed"] = cfg.experiment.seed;
  m["workers"] = rc.workers;
  m["artifacts"] = artifacts;
  m["versions"] = {{"snse", "1.0.0"},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  write_file(std::filesystem::path(rc.out_dir) / "manifest.json", m.dump(2) + "\n");
}

/// Minimal log-log scatter + fit line plot of the per-level median errors.
inline std::string rates_svg(const RateEstimate& est) {
  const double W = 480, H = 360, ml = 60, mr = 20, mt = 20, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& l : est.levels) {
    double x = std::log10(l.h), y = std::log10(l.median_error);
    xmin = std::min(xmin, x); xmax = std::max(xmax, x);
    ymin = std::min(ymin, y); ymax = std::max(ymax, y);
  }
  double xpad = 0.1 * std::max(xmax - xmin, 1e-6), ypad = 0.1 * std::max(ymax - ymin, 1e-6);
  xmin -= xpad; xmax += xpad; ymin -= ypad; ymax += ypad;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
    << "<rect width='100%' height='100%' fill='white'/>\n"
    << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
    << "' stroke='black'/>\n"
    << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
    << "' stroke='black'/>\n";
  // fit line through the mean point with the estimated slope
  double xb = 0, yb = 0;
  for (const auto& l : est.levels) {
    xb += std::log10(l.h);
    yb += std::log10(l.median_error);
  }
  xb /= est.levels.size();
  yb /= est.levels.size();
  double x0 = xmin + xpad / 2, x1 = xmax - xpad / 2;
  s << "<line x1='" << px(x0) << "' y1='" << py(yb + est.slope * (x0 - xb)) << "' x2='"
    << px(x1) << "' y2='" << py(yb + est.slope * (x1 - xb))
    << "' stroke='steelblue' stroke-width='1.5'/>\n";
  for (const auto& l : est.levels)
    s << "<circle cx='" << px(std::log10(l.h)) << "' cy='" << py(std::log10(l.median_error))
      << "' r='4' fill='crimson'/>\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "slope %.3f  [%.3f, %.3f]", est.slope, est.slope_ci_low,
                est.slope_ci_high);
  s << "<text x='" << ml + 10 << "' y='" << mt + 16 << "' font-family='sans-serif' font-size='13'>"
    << buf << "</text>\n"
    << "<text x='" << W / 2 << "' y='" << H - 12
    << "' font-family='sans-serif' font-size='13' text-anchor='middle'>log10 h</text>\n"
    << "<text x='16' y='" << H / 2
    << "' font-family='sans-serif' font-size='13' text-anchor='middle' transform='rotate(-90 16 "
    << H / 2 << ")'>log10 median E</text>\n</svg>\n";
  return s.str();
}

inline std::vector<ErrorRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "sample,level,h,tau,E,stopped")
    throw std::runtime_error("unexpected records.csv header in " + path.string());
  std::vector<ErrorRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ErrorRecord r;
    int stopped = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lg,%lg,%lg,%d", &r.sample, &r.level, &r.h, &r.tau,
                    &r.error, &stopped) != 6)
      throw std::runtime_error("malformed records.csv line: " + line);
    r.stopped = stopped != 0;
    records.push_back(r);
  }
  return records;
}

// ------------------------------------------------------------------ commands

inline int cmd_mesh_info(const RunConfig& rc, const Config& cfg, std::ostream& out) {
  ExperimentPlan plan = plan_from(cfg);
  out << "level,mesh_n,h_max,shape_ratio,vertices,triangles,edges,velocity_dofs,pressure_dofs\n";
  auto print = [&](const std::string& label, int n) {
    Mesh mesh = build_unit_square_mesh(n);
    DofMap dof = build_dofmap(mesh);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%d,%d,%d,%d,%d\n", label.c_str(), n,
                  mesh.h_max, mesh.shape_ratio, mesh.n_vertices(), mesh.n_triangles(),
                  mesh.n_edges(), dof.n_free, dof.n_pressure);
    out << buf;
  };
  for (std::size_t l = 0; l < plan.levels.size(); ++l)
    print(std::to_string(l + 1), plan.levels[l].mesh_n);
  print("reference", plan.reference.mesh_n);
  write_manifest(rc, cfg, {});
  return 0;
}

inline int cmd_infsup(const RunConfig& rc, const Config& cfg, std::ostream& out) {
  ExperimentPlan plan = plan_from(cfg);
  out << "level,mesh_n,h,beta_h\n";
  char buf[160];
  for (std::size_t l = 0; l < plan.levels.size(); ++l) {
    log(1, "infsup: level " + std::to_string(l + 1));
    Mesh mesh = build_unit_square_mesh(plan.levels[l].mesh_n);
    DofMap dof = build_dofmap(mesh);
    AssembledOperators ops = assemble_static(mesh, dof);
    double beta = infsup_constant(mesh, dof, ops);
    std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g\n", l + 1, plan.levels[l].mesh_n,
                  plan.levels[l].h, beta);
    out << buf;
  }
  write_manifest(rc, cfg, {});
  return 0;
}

inline int cmd_single_run(const RunConfig& rc, const Config& cfg) {
  Mesh mesh = build_unit_square_mesh(cfg.mesh.n);
  DofMap dof = build_dofmap(mesh);
  AssembledOperators ops = assemble_static(mesh, dof);
  NoiseModel noise =
      NoiseModel::create(cfg.noise.modes, cfg.noise.decay, cfg.noise.noise_type(),
                         cfg.noise.scale);
  NoiseAssembly nass(noise, mesh, dof);
  DivFreeProjector proj(mesh, dof, ops);
  Vector u0 = proj.project(default_initial_field());
  Stepper stepper(mesh, dof, ops, noise, nass, cfg.scheme);
  WienerPath path = sample_path(derive_seed(cfg.experiment.seed, 0), cfg.scheme.steps,
                                noise.J, cfg.scheme.tau());
  log(1, "single-run: stepping " + std::to_string(cfg.scheme.steps) + " steps");
  Trajectory traj = stepper.run_path(path, u0);
  std::ostringstream csv;
  Stepper::write_diagnostics_csv(traj, csv);
  write_file(std::filesystem::path(rc.out_dir) / "diagnostics.csv", csv.str());
  write_manifest(rc, cfg, {"diagnostics.csv"});
  return 0;
}

inline int cmd_stability(const RunConfig& rc, const Config& cfg) {
  ExperimentPlan plan = plan_from(cfg);
  NoiseModel noise =
      NoiseModel::create(cfg.noise.modes, cfg.noise.decay, cfg.noise.noise_type(),
                         cfg.noise.scale);
  ExperimentContext ctx(plan, noise, default_initial_field());
  StabilityReport rep = stability_report(ctx, plan, cfg.scheme, rc.workers);
  std::ostringstream csv;
  write_stability_csv(rep, csv);
  write_file(std::filesystem::path(rc.out_dir) / "stability.csv", csv.str());
  write_manifest(rc, cfg, {"stability.csv"});
  if (rep.growth_flagged)
    std::cerr << "warning: energy estimate grows beyond CI width across levels\n";
  return 0;
}

inline int cmd_convergence(const RunConfig& rc, const Config& cfg) {
  ExperimentPlan plan = plan_from(cfg);
  NoiseModel noise =
      NoiseModel::create(cfg.noise.modes, cfg.noise.decay, cfg.noise.noise_type(),
                         cfg.noise.scale);
  log(1, "convergence: building level contexts");
  ExperimentContext ctx(plan, noise, default_initial_field());
  log(1, "convergence: running " + std::to_string(plan.samples) + " samples");
  ExperimentResult result = run_experiment(ctx, plan, cfg.scheme, rc.workers);
  std::ostringstream rec_csv;
  write_records_csv(result.records, rec_csv);
  write_file(std::filesystem::path(rc.out_dir) / "records.csv", rec_csv.str());
  std::vector<std::string> artifacts{"records.csv"};
  if (static_cast<int>(plan.levels.size()) >= 3) {
    RateEstimate est = estimate_rates(result.records, plan);
    std::ostringstream rates_csv_s, exc_csv;
    write_rates_csv(est, rates_csv_s);
    write_exceedance_csv(est, exc_csv);
    write_file(std::filesystem::path(rc.out_dir) / "rates.csv", rates_csv_s.str());
    write_file(std::filesystem::path(rc.out_dir) / "exceedance.csv", exc_csv.str());
    write_file(std::filesystem::path(rc.out_dir) / "rates.svg", rates_svg(est));
    artifacts.insert(artifacts.end(), {"rates.csv", "exceedance.csv", "rates.svg"});
  }
  write_manifest(rc, cfg, artifacts);
  if (result.failed_samples > 0)
    std::cerr << "warning: " << result.failed_samples << " samples failed and were excluded\n";
  return 0;
}

inline int cmd_project_rates(const RunConfig& rc, const Config& cfg) {
  ExperimentPlan plan = plan_from(cfg);
  auto records = read_records_csv(std::filesystem::path(rc.out_dir) / "records.csv");
  RateEstimate est = estimate_rates(records, plan);
  std::ostringstream rates_csv_s, exc_csv;
  write_rates_csv(est, rates_csv_s);
  write_exceedance_csv(est, exc_csv);
  write_file(std::filesystem::path(rc.out_dir) / "rates.csv", rates_csv_s.str());
  write_file(std::filesystem::path(rc.out_dir) / "exceedance.csv", exc_csv.str());
  write_file(std::filesystem::path(rc.out_dir) / "rates.svg", rates_svg(est));
  write_manifest(rc, cfg, {"rates.csv", "exceedance.csv", "rates.svg"});
  return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  RunConfig rc;
  CLI::App app{"stochastic incompressible-flow convergence experiments"};
  app.add_option("--command", rc.command,
                 "mesh-info | infsup | stability | convergence | single-run | project-rates")
      ->required();
  app.add_option("--config", rc.config_path, "config file (key=value sections)");
  app.add_option("--out", rc.out_dir, "output directory (created if absent)");
  std::uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "master seed override");
  app.add_option("--workers", rc.workers, "worker thread count")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*seed_opt) rc.seed = seed_val;

  try {
    std::filesystem::create_directories(rc.out_dir);
    Config cfg = cli_detail::load_config(rc);
    if (rc.command == "mesh-info") return cli_detail::cmd_mesh_info(rc, cfg, std::cout);
    if (rc.command == "infsup") return cli_detail::cmd_infsup(rc, cfg, std::cout);
    if (rc.command == "single-run") return cli_detail::cmd_single_run(rc, cfg);
    if (rc.command == "stability") return cli_detail::cmd_stability(rc, cfg);
    if (rc.command == "convergence") return cli_detail::cmd_convergence(rc, cfg);
    if (rc.command == "project-rates") return cli_detail::cmd_project_rates(rc, cfg);
    std::cerr << "error: unknown command '" << rc.command << "'\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace snse
