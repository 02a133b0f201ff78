#include "hbloc/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace hbloc;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string out;
  std::optional<long long> seed;
};

fs::path preset_dir() {
  if (const char* env = std::getenv("HBLOC_PRESET_DIR")) return env;
#ifdef HBLOC_PRESET_DIR
  if (fs::is_directory(HBLOC_PRESET_DIR)) return HBLOC_PRESET_DIR;
#endif
  return "presets";
}

/// Resolves the configuration and run directory.
std::pair<ExperimentConfig, fs::path> resolve(const Common& o) {
  if (!o.config.empty() && !o.preset.empty()) throw ConfigError("--config and --preset are mutually exclusive");
  nlohmann::json overrides = nlohmann::json::object();
  if (o.seed) {
    if (*o.seed < 0) throw ConfigError("--seed must be >= 0");
    overrides["seed"] = *o.seed;
  }
  fs::path path;
  if (!o.config.empty()) {
    path = o.config;
  } else if (!o.preset.empty()) {
    path = preset_dir() / (o.preset + ".json");
    if (!fs::exists(path)) throw ConfigError("unknown preset '" + o.preset + "' (looked for " + path.string() + ")");
  } else if (!o.out.empty() && fs::exists(fs::path(o.out) / "config.json")) {
    path = fs::path(o.out) / "config.json";
  } else {
    throw ConfigError("no configuration: pass --config PATH or --preset NAME, or --out DIR of an existing run");
  }
  ExperimentConfig c = load_config(path, overrides);
  const fs::path run = o.out.empty() ? fs::path(c.output) : fs::path(o.out);
  if (c.kind == ForwardKind::mesh) c.document["forward"]["mesh"] = fs::absolute(c.mesh_path).lexically_normal().string();
  c.document["seed"] = c.seed;
  c.document["output"] = run.string();
  return {std::move(c), run};
}

void cmd_simulate(const ExperimentConfig& c, const fs::path& run) {
  const ForwardModel f = build_forward(c, true);
  const Dataset d = simulate(c, f);
  write_dataset(run, c, f, d);
  std::cout << "simulate: " << d.b.size() << " measurements, sigma " << d.sigma << ' ' << f.data_units << ", " << f.M.cols()
            << " unknowns\n";
}

void cmd_map(const ExperimentConfig& c, const fs::path& run) {
  const Dataset d = read_dataset(run, c);
  const ForwardModel f = build_forward(c, false);
  const IasResult r = run_map(c, f, d);
  const Localization loc = write_map(run, f, r);
  std::cout << "map: " << r.iterations_run << " iterations, argmax group " << loc.group << " depth " << loc.depth
            << " m, horizontal error " << loc.horizontal_error << " m\n";
}

void cmd_mcmc(const ExperimentConfig& c, const fs::path& run) {
  const Dataset d = read_dataset(run, c);
  const ForwardModel f = build_forward(c, false);
  const Vector init = c.mcmc_init == "map" ? map_init_theta(run, f) : Vector();
  const ChainResult r = run_mcmc(c, f, d, init);
  const Localization loc = write_mcmc(run, c, f, r);
  std::cout << "mcmc: " << r.summary.samples << " samples over " << r.groups.size() << " groups, argmax group " << loc.group
            << " depth " << loc.depth << " m, depth error " << loc.depth_error << " m\n";
}

void cmd_leadfield(const ExperimentConfig& c, const fs::path& run) {
  const fs::path dir = run / "leadfield";
  if (c.kind == ForwardKind::planar) {
    const PlanarSetup s = make_planar_setup(c.planar);
    const Matrix M = build_planar_leadfield(s.sensors, s.dipoles);
    write_matrix_binary(dir / "magnetic.bin", M,
                        {{"kind", "magnetic"}, {"units", "T/(A m)"}, {"col_ids", {{"kind", "planar_dipole_component"}, {"count", M.cols()}}}});
    const Index K = s.dipoles.size();
    Vector x(K), y(K), z(K);
    for (Index k = 0; k < K; ++k) {
      const Vec3& p = s.dipoles.locations[static_cast<std::size_t>(k)];
      x[k] = p.x(), y[k] = p.y(), z[k] = p.z();
    }
    write_columns_csv(dir / "sources.csv", {"x", "y", "z"}, {x, y, z}, "group");
    std::cout << "leadfield: magnetic " << M.rows() << "x" << M.cols() << '\n';
    return;
  }
  const fem::HeadMesh mesh = config_mesh(c);
  const fem::FemSystem sys = fem::assemble_system(mesh);
  const fem::FemSolver solver(sys);
  const Matrix E = solver.electric_lead_field();
  fem::write_lead_field(dir / "electric.bin", E, "electric", "V/(A m)", "electrode");
  const Vector sums = E.colwise().sum().transpose();
  const double scale = E.cwiseAbs().maxCoeff();
  write_json(dir / "kirchhoff.json", {{"max_abs_column_sum", sums.cwiseAbs().maxCoeff()},
                                      {"max_abs_entry", scale},
                                      {"relative", scale > 0 ? sums.cwiseAbs().maxCoeff() / scale : 0.0}});
  std::string shape = std::to_string(E.rows()) + "x" + std::to_string(E.cols());
  if (!mesh.sensors.empty()) {
    const Matrix B = fem::magnetic_lead_field(solver, mesh, fem::magnetic_parts(sys, mesh));
    fem::write_lead_field(dir / "magnetic.bin", B, "magnetic", "T/(A m)", "magnetometer");
    shape += ", magnetic " + std::to_string(B.rows()) + "x" + std::to_string(B.cols());
  }
  const Index N = sys.num_sources();
  std::vector<Vector> cols(6, Vector(N));
  for (Index k = 0; k < N; ++k) {
    const auto& b = sys.rt.basis[static_cast<std::size_t>(k)];
    const Vec3 x = fem::rt_center(mesh, b), m = fem::rt_moment(mesh, b);
    for (int i = 0; i < 3; ++i) cols[static_cast<std::size_t>(i)][k] = x[i], cols[static_cast<std::size_t>(i + 3)][k] = m[i];
  }
  write_columns_csv(dir / "sources.csv", {"x", "y", "z", "mx", "my", "mz"}, cols, "rt_face");
  std::cout << "leadfield: electric " << shape << '\n';
}

void cmd_summarize(const ExperimentConfig& c, const fs::path& run) {
  const auto rep = summarize_run(run, c);
  bool all = true;
  for (const auto& ch : rep["checks"]) {
    std::cout << (ch["pass"].get<bool>() ? "PASS " : "FAIL ") << ch["name"].get<std::string>() << " value "
              << ch["value"].get<double>() << " threshold " << ch["threshold"].get<double>() << '\n';
    all = all && ch["pass"].get<bool>();
  }
  std::cout << "summarize: " << rep["checks"].size() << " checks, " << (all ? "all pass" : "some fail") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical Bayesian source localization: simulate data, compute MAP and CM estimates, export lead fields."};
  app.set_version_flag("--version", std::string(HBLOC_VERSION));
  app.require_subcommand(1);

  Common opts;
  using Handler = void (*)(const ExperimentConfig&, const fs::path&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
      {"simulate", "Build the forward model and simulate measurements", cmd_simulate},
      {"map", "Compute the MAP estimate with the IAS iteration", cmd_map},
      {"mcmc", "Sample the ROI posterior and report conditional means", cmd_mcmc},
      {"leadfield", "Export lead field matrices and source descriptions", cmd_leadfield},
      {"summarize", "Collect estimates into a report with localization checks", cmd_summarize},
  };
  std::map<CLI::App*, std::pair<std::string, Handler>> handlers;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto* cfg = sub->add_option("--config", opts.config, "Experiment configuration (JSON)");
    auto* pre = sub->add_option("--preset", opts.preset, "Named configuration from the presets directory");
    cfg->excludes(pre);
    sub->add_option("--seed", opts.seed, "Random seed (overrides the configuration)");
    sub->add_option("--out", opts.out, "Run directory (overrides the configuration)");
    handlers[sub] = {name, fn};
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto* sub = app.get_subcommands().front();
  const auto& [name, fn] = handlers.at(const_cast<CLI::App*>(sub));
  try {
    auto [cfg, run] = resolve(opts);
    RunLock lock(run);
    const auto t0 = std::chrono::steady_clock::now();
    fn(cfg, run);
    write_json(run / "config.json", cfg.document);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    update_manifest(run, cfg, name, secs);
    return 0;
  } catch (const DomainError& e) {  // includes configuration and mesh errors
    std::cerr << "hbloc " << name << ": error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "hbloc " << name << ": error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "hbloc " << name << ": failed: " << e.what() << '\n';
    return 1;
  }
}
