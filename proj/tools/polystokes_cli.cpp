// Command-line front end. Subcommands: solve, convergence, check-law,
// mesh-info. Configuration comes from an optional JSON file (--config) plus
// per-key flag overrides; every run writes a machine-readable summary.json
// into the output directory.
//
// Exit codes: 0 success, 1 usage/validation/I-O error, 2 computational
// failure (solver non-convergence or a failed law check).

#include <polystokes/config.hpp>
#include <polystokes/manufactured.hpp>
#include <polystokes/newton.hpp>
#include <polystokes/verification.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace {

using namespace polystokes;
using ordered_json = nlohmann::ordered_json;

struct FlagValues {
  std::string config_path;
  std::string family;
  std::string mesh_file;
  std::string out;
  std::string law_kind;
  std::vector<std::size_t> levels;
  std::size_t n = 0;
  int k = 0;
  double gamma = 0.0;
  double amplitude = 0.0;
  int quad_boost = 0;
  unsigned seed = 0;
  unsigned threads = 0;
  double mu = 0.0, delta = 0.0, a = 0.0, r = 0.0;
  double newton_tol = 0.0;
  int newton_max_iter = 0;
  bool damping = true, condense = false, continuation = true;
  double continuation_step = 0.0;
};

void add_options(CLI::App* cmd, FlagValues& f) {
  cmd->add_option("--config", f.config_path, "JSON configuration file");
  cmd->add_option("--family", f.family,
                  "mesh family: cartesian | distorted_cartesian | distorted_triangular");
  cmd->add_option("--mesh-file", f.mesh_file, "text mesh file ('polymesh 2d' format)");
  cmd->add_option("--levels", f.levels, "refinement levels, e.g. --levels 4,8,16,32")
      ->delimiter(',');
  cmd->add_option("--n", f.n, "subdivisions for a single generated mesh");
  cmd->add_option("--k", f.k, "polynomial degree (>= 1)");
  cmd->add_option("--gamma", f.gamma, "stabilization weight (negative = library default)");
  cmd->add_option("--amplitude", f.amplitude, "distortion amplitude for the distorted families");
  cmd->add_option("--quad-boost", f.quad_boost, "extra quadrature exactness for nonlinear terms");
  cmd->add_option("--seed", f.seed, "random seed for sampling-based checks");
  cmd->add_option("--threads", f.threads, "worker threads for assembly");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--law", f.law_kind, "law kind: newtonian | power_law | carreau_yasuda");
  cmd->add_option("--mu", f.mu, "consistency index (> 0)");
  cmd->add_option("--delta", f.delta, "degeneracy parameter (>= 0)");
  cmd->add_option("--a", f.a, "transition index (> 0)");
  cmd->add_option("--r", f.r, "flow behavior exponent (in (1, inf))");
  cmd->add_option("--newton-tol", f.newton_tol, "relative residual tolerance");
  cmd->add_option("--newton-max-iter", f.newton_max_iter, "iteration cap per stage");
  cmd->add_flag("--damping,!--no-damping", f.damping, "backtracking line search");
  cmd->add_flag("--condense,!--no-condense", f.condense, "static condensation");
  cmd->add_flag("--continuation,!--no-continuation", f.continuation,
                "exponent continuation for strongly non-Newtonian laws");
  cmd->add_option("--continuation-step", f.continuation_step, "max exponent step");
}

/// Merges the flags that were actually passed (on the app or the parsed
/// subcommand) over the config-file values.
ordered_json build_overlay(const CLI::App& app, const CLI::App* sub, const FlagValues& f) {
  const auto passed = [&](const std::string& name) {
    return (sub != nullptr && sub->count(name) > 0) || app.count(name) > 0;
  };
  ordered_json overlay = ordered_json::object();
  if (passed("--family")) overlay["family"] = f.family;
  if (passed("--mesh-file")) overlay["mesh_file"] = f.mesh_file;
  if (passed("--levels")) overlay["levels"] = f.levels;
  if (passed("--n")) overlay["n"] = f.n;
  if (passed("--k")) overlay["k"] = f.k;
  if (passed("--gamma")) overlay["gamma"] = f.gamma;
  if (passed("--amplitude")) overlay["amplitude"] = f.amplitude;
  if (passed("--quad-boost")) overlay["quad_boost"] = f.quad_boost;
  if (passed("--seed")) overlay["seed"] = f.seed;
  if (passed("--threads")) overlay["threads"] = f.threads;
  if (passed("--out")) overlay["out"] = f.out;
  if (passed("--law")) overlay["law"]["kind"] = f.law_kind;
  if (passed("--mu")) overlay["law"]["mu"] = f.mu;
  if (passed("--delta")) overlay["law"]["delta"] = f.delta;
  if (passed("--a")) overlay["law"]["a"] = f.a;
  if (passed("--r")) overlay["law"]["r"] = f.r;
  if (passed("--newton-tol")) overlay["newton"]["tol"] = f.newton_tol;
  if (passed("--newton-max-iter")) overlay["newton"]["max_iter"] = f.newton_max_iter;
  if (passed("--damping") || passed("--no-damping")) overlay["newton"]["damping"] = f.damping;
  if (passed("--condense") || passed("--no-condense")) overlay["newton"]["condense"] = f.condense;
  if (passed("--continuation") || passed("--no-continuation")) {
    overlay["newton"]["continuation"] = f.continuation;
  }
  if (passed("--continuation-step")) overlay["newton"]["continuation_step"] = f.continuation_step;
  return overlay;
}

void write_summary(const RunConfig& config, const ordered_json& results) {
  std::filesystem::create_directories(config.out);
  const std::filesystem::path path = std::filesystem::path(config.out) / "summary.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  ordered_json summary;
  summary["config"] = config.to_json();
  summary["results"] = results;
  out << summary.dump(2) << '\n';
}

Mesh make_run_mesh(const RunConfig& config) {
  if (!config.mesh_file.empty()) return load_mesh(config.mesh_file);
  return make_family_mesh(parse_mesh_family(config.family), config.n, config.amplitude);
}

ordered_json newton_json(const NewtonReport& report) {
  ordered_json j;
  j["converged"] = report.converged;
  j["solver_failure"] = report.solver_failure;
  j["line_search_failed"] = report.line_search_failed;
  j["iterations"] = report.iterations;
  j["final_stage_iterations"] = report.final_stage_iterations;
  j["damping_steps"] = report.damping_steps;
  j["linear_solves"] = report.linear_solves;
  j["residual_history"] = report.residual_history;
  j["stage_r"] = report.stage_r;
  j["stage_iterations"] = report.stage_iterations;
  j["condensed_size"] = report.condensed_size;
  return j;
}

int run_mesh_info(const RunConfig& config) {
  const Mesh mesh = make_run_mesh(config);
  const std::string source =
      config.mesh_file.empty() ? config.family + " n=" + std::to_string(config.n)
                               : config.mesh_file;
  std::printf("mesh: %s\n", source.c_str());
  std::printf("vertices: %zu\n", mesh.n_vertices());
  std::printf("cells: %zu\n", mesh.n_cells());
  std::printf("faces: %zu (interior %zu, boundary %zu)\n", mesh.n_faces(),
              mesh.n_interior_faces(), mesh.n_boundary_faces());
  std::printf("h: %.12g\n", mesh.h());

  ordered_json results;
  results["source"] = source;
  results["vertices"] = mesh.n_vertices();
  results["cells"] = mesh.n_cells();
  results["faces"] = mesh.n_faces();
  results["interior_faces"] = mesh.n_interior_faces();
  results["boundary_faces"] = mesh.n_boundary_faces();
  results["h"] = mesh.h();
  write_summary(config, results);
  return 0;
}

int run_check_law(const RunConfig& config) {
  const std::vector<double> exponents = {1.5, 1.75, 2.0, 2.25, 2.5, 2.75};
  const std::size_t samples = 10000;
  ordered_json results;
  results["samples"] = samples;
  results["checks"] = ordered_json::array();
  bool all_pass = true;
  for (double r : exponents) {
    FlowLaw law = config.law;
    law.kind = (law.kind == LawKind::newtonian) ? LawKind::carreau_yasuda : law.kind;
    law.r = r;
    law.validate();
    const PowerFramedReport report = verify_power_framed(law, samples, config.seed);
    all_pass = all_pass && report.pass;
    std::printf("%s r=%-5g holder=%.12g monotonicity=%.12g\n",
                report.pass ? "PASS" : "FAIL", r, report.worst_holder,
                report.worst_monotonicity);
    ordered_json entry;
    entry["r"] = r;
    entry["worst_holder"] = report.worst_holder;
    entry["worst_monotonicity"] = report.worst_monotonicity;
    entry["pass"] = report.pass;
    results["checks"].push_back(entry);
  }
  results["all_pass"] = all_pass;
  write_summary(config, results);
  return all_pass ? 0 : 2;
}

int run_solve(const RunConfig& config) {
  const ReferenceCase reference = reference_case(config.law);
  const DiscreteProblem problem =
      DiscreteProblem::create(make_run_mesh(config), config.k, config.law, reference.load,
                              reference.velocity, config.gamma, config.quad_boost,
                              config.threads);
  const auto [state, report] =
      newton_solve(problem, DiscreteState::zero(problem.layout), config.newton());

  ordered_json results;
  results["newton"] = newton_json(report);
  results["n_cells"] = problem.layout.n_cells;
  results["h"] = problem.mesh.h();
  results["unknowns"] = problem.layout.n_unknowns();

  ConvergenceReport row;
  row.family = config.mesh_file.empty() ? config.family : "file";
  row.k = config.k;
  row.r = config.law.r;
  if (report.converged) {
    const double err_vel = error_velocity(problem, state, reference.velocity);
    const double err_pre = error_pressure(problem, state, reference.pressure);
    const VecX residual = assemble_residual(problem, state);
    double mass_residual = 0.0;
    const std::size_t pressure_begin = problem.layout.unknown_index(
        problem.layout.pressure_offset(0));
    for (std::size_t c = 0; c < problem.layout.n_cells * problem.layout.pressure_block; c++) {
      mass_residual = std::max(mass_residual, std::abs(residual(pressure_begin + c)));
    }
    results["err_vel"] = err_vel;
    results["err_pre"] = err_pre;
    results["energy_norm"] = global_energy_norm(problem, state.full);
    results["pressure_mean"] = pressure_mean(problem, state);
    results["mass_residual"] = mass_residual;

    ConvergenceLevel level;
    level.n = config.n;
    level.h = problem.mesh.h();
    level.err_vel = err_vel;
    level.err_pre = err_pre;
    level.newton_iters = report.iterations;
    level.converged = true;
    row.levels.push_back(level);
    std::filesystem::create_directories(config.out);
    std::ofstream csv(std::filesystem::path(config.out) / "solve.csv", std::ios::binary);
    csv << row.csv();

    std::printf("converged in %d iterations (%d linear solves)\n", report.iterations,
                report.linear_solves);
    std::printf("err_vel: %.12e\nerr_pre: %.12e\n", err_vel, err_pre);
  } else {
    std::printf("solver did not converge (iterations: %d, solver_failure: %d, "
                "line_search_failed: %d)\n",
                report.iterations, report.solver_failure ? 1 : 0,
                report.line_search_failed ? 1 : 0);
  }
  write_summary(config, results);
  return report.converged ? 0 : 2;
}

int run_convergence_study(const RunConfig& config) {
  ConvergenceSetup setup;
  setup.family = parse_mesh_family(config.family);
  setup.levels = config.levels;
  setup.k = config.k;
  setup.law = config.law;
  setup.gamma = config.gamma;
  setup.quad_boost = config.quad_boost;
  setup.threads = config.threads;
  setup.amplitude = config.amplitude;
  setup.newton = config.newton();
  const ConvergenceReport report = run_convergence(setup);
  write_convergence_files(report, config.out, "convergence");

  ordered_json results;
  results["levels"] = ordered_json::array();
  bool all_converged = true;
  for (const ConvergenceLevel& level : report.levels) {
    std::printf("n=%-4zu h=%.6e err_vel=%.6e err_pre=%.6e eoc_vel=%-8.4g eoc_pre=%-8.4g "
                "iters=%d%s\n",
                level.n, level.h, level.err_vel, level.err_pre, level.eoc_vel, level.eoc_pre,
                level.newton_iters, level.converged ? "" : "  [not converged]");
    all_converged = all_converged && level.converged;
    ordered_json entry;
    entry["n"] = level.n;
    entry["h"] = level.h;
    entry["err_vel"] = level.err_vel;
    entry["err_pre"] = level.err_pre;
    entry["eoc_vel"] = level.eoc_vel;
    entry["eoc_pre"] = level.eoc_pre;
    entry["newton_iters"] = level.newton_iters;
    entry["converged"] = level.converged;
    entry["mass_residual"] = level.mass_residual;
    results["levels"].push_back(entry);
  }
  std::printf("least-squares slopes: velocity %.4g, pressure %.4g\n", report.ls_slope_vel,
              report.ls_slope_pre);
  results["ls_slope_vel"] = report.ls_slope_vel;
  results["ls_slope_pre"] = report.ls_slope_pre;
  results["all_converged"] = all_converged;
  write_summary(config, results);
  return all_converged ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid high-order solver for generalized Stokes flow on polytopal meshes"};
  app.require_subcommand(0, 1);
  FlagValues flags;
  add_options(&app, flags);
  CLI::App* solve_cmd = app.add_subcommand("solve", "solve the built-in reference case");
  CLI::App* conv_cmd = app.add_subcommand("convergence", "error study over mesh refinements");
  CLI::App* law_cmd = app.add_subcommand("check-law", "verify the power-framing of the law");
  CLI::App* info_cmd = app.add_subcommand("mesh-info", "print mesh statistics");
  for (CLI::App* cmd : {solve_cmd, conv_cmd, law_cmd, info_cmd}) add_options(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    return app.exit(error);
  }

  try {
    const CLI::App* sub =
        app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    std::string config_path = flags.config_path;
    nlohmann::json merged = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config file '" + config_path + "'");
      try {
        merged = nlohmann::json::parse(in, nullptr, true, true);
      } catch (const nlohmann::json::parse_error& error) {
        throw std::runtime_error("config file '" + config_path + "': " + error.what());
      }
      if (!merged.is_object()) {
        throw std::runtime_error("config file '" + config_path + "': expected a JSON object");
      }
    }
    merged.update(build_overlay(app, sub, flags), true);
    if (sub != nullptr) merged["command"] = sub->get_name();
    if (!merged.contains("command")) {
      std::fprintf(stderr, "error: no subcommand given and no 'command' in the config file\n");
      return 1;
    }
    const RunConfig config = parse_config(merged);
    switch (config.command) {
      case Command::solve: return run_solve(config);
      case Command::convergence: return run_convergence_study(config);
      case Command::check_law: return run_check_law(config);
      case Command::mesh_info: return run_mesh_info(config);
    }
    return 1;
  } catch (const std::exception& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 1;
  }
}
