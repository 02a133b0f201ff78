#pragma once

// Config-driven pipelines: forward model construction, data simulation, MAP
// and ROI sampling runs, their file outputs and run-directory bookkeeping.
//
// Run directory layout:
//   config.json                 effective configuration
//   data/   b.csv, simulation.json, truth.json, geometry.json, leadfield.bin
//   map/    alpha.csv, theta.csv, groups.csv, layers.csv, log_posterior.csv,
//           estimate.json, slices/layer_NN.csv (planar)
//   mcmc/   summary.json, cm.csv, alpha_cm.csv, layers.csv, trace.csv,
//           chain_theta.bin, chain_alpha.bin, chain_theta.csv
//   summary/report.json, report.csv
//   manifest.json

#include "hbloc/config.hpp"
#include "hbloc/fem/leadfield.hpp"
#include "hbloc/io.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <optional>

namespace hbloc {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const std::filesystem::path& p) {
  auto f = detail::open_in(p, std::ios::in | std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return hex64(h);
}

/// Hash of the full configuration and of the parts that determine the data.
inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(c.document.dump())); }

inline std::string data_hash(const ExperimentConfig& c) {
  nlohmann::json j;
  j["forward"] = c.document.value("forward", nlohmann::json::object());
  j["noise"] = c.document.value("noise", nlohmann::json::object());
  j["seed"] = c.seed;
  return hex64(fnv1a64(j.dump()));
}

// ---- Forward models --------------------------------------------------------------

/// Per-group source positions with a depth below the measurement surface and a
/// layer index used for depth-resolved reporting.
struct SourceGeometry {
  ForwardKind kind = ForwardKind::planar;
  std::vector<Vec3> locations;
  Vector depth;
  std::vector<int> layer;
  std::vector<double> layer_depths;
  double outer_radius = 0.0;

  /// Outward unit normal of the measurement surface above x.
  Vec3 up(const Vec3& x) const {
    if (kind == ForwardKind::planar || x.norm() == 0.0) return Vec3::UnitZ();
    return x.normalized();
  }
  double depth_of(const Vec3& x) const { return kind == ForwardKind::planar ? -x.z() : outer_radius - x.norm(); }
};

struct ForwardModel {
  Matrix M;
  VarianceGrouping grouping;
  SourceGeometry geometry;
  std::vector<Index> roi_groups;
  Vec3 truth_location = Vec3::Zero();
  double truth_depth = 0.0;
  /// Noiseless data of the true source, from the data model (empty unless requested).
  Vector clean_data;
  std::string data_units;
  nlohmann::json geometry_json;
  std::optional<PlanarSetup> planar;
};

namespace detail {

inline void planar_layers(SourceGeometry& g, const PlanarSetup& s) {
  g.layer = s.dipoles.layer_of;
  g.layer_depths = s.dipoles.layer_depths;
}

inline void binned_layers(SourceGeometry& g, double step) {
  const Index K = static_cast<Index>(g.locations.size());
  int max_layer = 0;
  g.layer.resize(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    const int l = std::max(0, static_cast<int>(std::floor(g.depth[k] / step)));
    g.layer[static_cast<std::size_t>(k)] = l;
    max_layer = std::max(max_layer, l);
  }
  g.layer_depths.clear();
  for (int l = 0; l <= max_layer; ++l) g.layer_depths.push_back((l + 0.5) * step);
}

inline Matrix fem_lead_field(const fem::HeadMesh& mesh, const fem::FemSystem& sys, Modality modality) {
  if (modality == Modality::eeg) return fem::electric_lead_field(sys);
  return fem::magnetic_lead_field(sys, mesh);
}

/// Data of a point-like source on a given mesh, through one forward solve.
inline Vector fem_truth_data(const fem::HeadMesh& mesh, const FemSourceSpec& src, Modality modality) {
  const fem::FemSystem sys = fem::assemble_system(mesh);
  const fem::FemSolver solver(sys);
  const Vector alpha = fem::rt_dipole(mesh, sys.rt, src.position, src.moment, src.support_radius);
  fem::MagneticParts parts;
  if (modality == Modality::meg) parts = fem::magnetic_parts(sys, mesh);
  else parts = {Matrix::Zero(0, sys.num_sources()), Matrix::Zero(0, sys.num_nodes())};
  const auto fr = fem::forward_solve(solver, parts, alpha);
  return modality == Modality::eeg ? fr.U : fr.field;
}

}  // namespace detail

inline fem::HeadMesh config_mesh(const ExperimentConfig& c, int resolution = 0) {
  if (c.kind == ForwardKind::sphere) {
    fem::SphereOptions o = c.sphere;
    if (resolution > 0) o.resolution = resolution;
    return fem::make_sphere_mesh(o);
  }
  if (c.kind == ForwardKind::mesh) return fem::load_mesh(read_json(c.mesh_path));
  throw DomainError("config_mesh: planar configurations have no mesh");
}

/// Builds the inversion lead field, groups, geometry and ROI. With
/// `with_truth` the noiseless data of the true source are computed as well,
/// on the reference mesh when one is configured.
inline ForwardModel build_forward(const ExperimentConfig& c, bool with_truth) {
  ForwardModel f;
  if (c.kind == ForwardKind::planar) {
    const PlanarSetup s = make_planar_setup(c.planar);
    f.M = build_planar_leadfield(s.sensors, s.dipoles);
    f.grouping = planar_grouping(s.dipoles);
    f.geometry.kind = ForwardKind::planar;
    f.geometry.locations = s.dipoles.locations;
    f.geometry.depth.resize(s.dipoles.size());
    for (Index k = 0; k < s.dipoles.size(); ++k) f.geometry.depth[k] = -s.dipoles.locations[static_cast<std::size_t>(k)].z();
    detail::planar_layers(f.geometry, s);
    f.roi_groups = s.roi_groups;
    f.truth_location = s.truth.locations[0];
    f.truth_depth = -f.truth_location.z();
    if (with_truth) f.clean_data = truth_leadfield(s) * s.truth_moment;
    f.data_units = "T";
    f.geometry_json = planar_geometry_json(s);
    f.planar = s;
    return f;
  }

  const fem::HeadMesh mesh = config_mesh(c);
  const fem::FemSystem sys = fem::assemble_system(mesh);
  if (c.modality == Modality::eeg && mesh.num_electrodes() < 2) throw DomainError("eeg needs at least two electrodes");
  if (c.modality == Modality::meg && mesh.sensors.empty()) throw DomainError("meg needs magnetometers");
  f.M = detail::fem_lead_field(mesh, sys, c.modality);
  f.grouping = VarianceGrouping::identity(sys.num_sources());
  f.geometry.kind = c.kind;
  double R = 0.0;
  for (const auto& p : mesh.nodes) R = std::max(R, p.norm());
  f.geometry.outer_radius = R;
  f.geometry.depth.resize(sys.num_sources());
  for (Index k = 0; k < sys.num_sources(); ++k) {
    const Vec3 x = fem::rt_center(mesh, sys.rt.basis[static_cast<std::size_t>(k)]);
    f.geometry.locations.push_back(x);
    f.geometry.depth[k] = R - x.norm();
  }
  detail::binned_layers(f.geometry, 0.005);
  f.truth_location = c.source.position;
  f.truth_depth = R - c.source.position.norm();
  for (Index k = 0; k < sys.num_sources(); ++k)
    if ((f.geometry.locations[static_cast<std::size_t>(k)] - c.source.position).norm() <= c.roi_radius) f.roi_groups.push_back(k);
  if (f.roi_groups.empty()) throw DomainError("roi_radius selects no source elements");
  if (with_truth) {
    const int ref = c.kind == ForwardKind::sphere ? c.reference_resolution : 0;
    f.clean_data = ref > 0 && ref != c.sphere.resolution ? detail::fem_truth_data(config_mesh(c, ref), c.source, c.modality)
                                                         : detail::fem_truth_data(mesh, c.source, c.modality);
  }
  f.data_units = c.modality == Modality::eeg ? "V" : "T";
  const auto counts = fem::domain_counts(mesh);
  nlohmann::json dc;
  for (const auto& [d, n] : counts) dc[mesh.domains.at(d).name] = n;
  f.geometry_json = {{"kind", c.kind == ForwardKind::sphere ? "sphere" : "mesh"},
                     {"units", "m"},
                     {"nodes", mesh.num_nodes()},
                     {"tets", mesh.num_tets()},
                     {"domain_tets", dc},
                     {"source_domain", mesh.domains.at(mesh.source_domain).name},
                     {"electrodes", mesh.num_electrodes()},
                     {"sensors", mesh.sensors.size()},
                     {"sources", sys.num_sources()},
                     {"outer_radius", R},
                     {"modality", c.modality == Modality::eeg ? "eeg" : "meg"},
                     {"truth", {{"location", vec3_json(c.source.position)}, {"moment", vec3_json(c.source.moment)}}},
                     {"roi_groups", f.roi_groups}};
  return f;
}

// ---- Localization --------------------------------------------------------------

struct Localization {
  Index group = -1;
  Vec3 location = Vec3::Zero();
  double depth = 0.0;
  double amplitude = 0.0;
  double horizontal_error = 0.0;
  double depth_error = 0.0;
};

/// Location of the group with the largest amplitude, compared with the truth.
/// `groups` maps entries of `amplitudes` to global group indices (empty: identity).
inline Localization localize(const Vector& amplitudes, const ForwardModel& f, const std::vector<Index>& groups = {}) {
  if (amplitudes.size() == 0) throw DomainError("localize: no amplitudes");
  Index best = 0;
  amplitudes.maxCoeff(&best);
  Localization out;
  out.group = groups.empty() ? best : groups[static_cast<std::size_t>(best)];
  out.amplitude = amplitudes[best];
  out.location = f.geometry.locations[static_cast<std::size_t>(out.group)];
  out.depth = f.geometry.depth[out.group];
  const Vec3 n = f.geometry.up(f.truth_location);
  const Vec3 d = out.location - f.truth_location;
  out.horizontal_error = (d - d.dot(n) * n).norm();
  out.depth_error = std::abs(out.depth - f.truth_depth);
  return out;
}

inline nlohmann::json localization_json(const Localization& l) {
  return {{"group", l.group},
          {"location", vec3_json(l.location)},
          {"depth", l.depth},
          {"amplitude", l.amplitude},
          {"horizontal_error", l.horizontal_error},
          {"depth_error", l.depth_error}};
}

struct LayerSummary {
  std::vector<double> depth, max_amplitude, energy;
};

inline LayerSummary layer_summary(const Vector& amplitudes, const ForwardModel& f, const std::vector<Index>& groups = {}) {
  LayerSummary s;
  const std::size_t L = f.geometry.layer_depths.size();
  s.depth = f.geometry.layer_depths;
  s.max_amplitude.assign(L, 0.0);
  s.energy.assign(L, 0.0);
  for (Index i = 0; i < amplitudes.size(); ++i) {
    const Index g = groups.empty() ? i : groups[static_cast<std::size_t>(i)];
    const auto l = static_cast<std::size_t>(f.geometry.layer[static_cast<std::size_t>(g)]);
    s.max_amplitude[l] = std::max(s.max_amplitude[l], amplitudes[i]);
    s.energy[l] += amplitudes[i] * amplitudes[i];
  }
  return s;
}

inline void write_layers_csv(const std::filesystem::path& p, const LayerSummary& s) {
  const auto v = [](const std::vector<double>& x) { return Eigen::Map<const Vector>(x.data(), static_cast<Index>(x.size())).eval(); };
  write_columns_csv(p, {"depth", "max_amplitude", "energy"}, {v(s.depth), v(s.max_amplitude), v(s.energy)}, "layer");
}

/// One CSV per planar layer: lattice position and amplitude.
inline void write_planar_slices(const std::filesystem::path& dir, const Vector& amplitudes, const ForwardModel& f,
                                const std::vector<Index>& groups = {}) {
  if (!f.planar) return;
  const auto& s = *f.planar;
  const int per_layer = s.nx * s.ny;
  std::map<int, std::vector<std::array<double, 5>>> rows;
  for (Index i = 0; i < amplitudes.size(); ++i) {
    const Index g = groups.empty() ? i : groups[static_cast<std::size_t>(i)];
    const int layer = static_cast<int>(g / per_layer), rem = static_cast<int>(g % per_layer);
    const Vec3& x = f.geometry.locations[static_cast<std::size_t>(g)];
    rows[layer].push_back({double(rem % s.nx), double(rem / s.nx), x.x(), x.y(), amplitudes[i]});
  }
  for (const auto& [layer, r] : rows) {
    std::vector<Vector> cols(5, Vector(static_cast<Index>(r.size())));
    for (std::size_t i = 0; i < r.size(); ++i)
      for (int c = 0; c < 5; ++c) cols[static_cast<std::size_t>(c)][static_cast<Index>(i)] = r[i][static_cast<std::size_t>(c)];
    char name[32];
    std::snprintf(name, sizeof name, "layer_%02d.csv", layer);
    write_columns_csv(dir / name, {"ix", "iy", "x", "y", "amplitude"}, cols, "row");
  }
}

// ---- Simulation ------------------------------------------------------------------

struct Dataset {
  Vector b;
  double sigma = 0.0;
};

inline Dataset simulate(const ExperimentConfig& c, const ForwardModel& f) {
  require_dims(f.clean_data.size() == f.M.rows(), "simulate: forward model was built without truth data");
  const auto sim = simulate_data(Matrix(f.clean_data), Vector::Ones(1), c.noise_fraction, c.add_noise, c.seed);
  return {sim.b, sim.sigma};
}

inline void write_dataset(const std::filesystem::path& run, const ExperimentConfig& c, const ForwardModel& f, const Dataset& d) {
  write_vector_csv(run / "data" / "b.csv", "b", d.b);
  write_json(run / "data" / "simulation.json", {{"sigma", d.sigma},
                                                {"noise_fraction", c.noise_fraction},
                                                {"add_noise", c.add_noise},
                                                {"seed", c.seed},
                                                {"units", f.data_units},
                                                {"measurements", d.b.size()},
                                                {"data_hash", data_hash(c)}});
  write_json(run / "data" / "truth.json", {{"location", vec3_json(f.truth_location)},
                                           {"depth", f.truth_depth},
                                           {"clean_data", to_std(f.clean_data)}});
  write_json(run / "data" / "geometry.json", f.geometry_json);
  write_matrix_binary(run / "data" / "leadfield.bin", f.M,
                      {{"kind", "inversion lead field"}, {"units", f.data_units + " per source unit"}, {"groups", f.grouping.num_groups()}});
}

inline Dataset read_dataset(const std::filesystem::path& run, const ExperimentConfig& c) {
  const auto sim_path = run / "data" / "simulation.json";
  if (!std::filesystem::exists(sim_path)) throw FileError("no simulated data in " + run.string() + " (run 'simulate' first)");
  const auto sim = read_json(sim_path);
  if (sim.value("data_hash", "") != data_hash(c))
    throw ConfigError("data in " + run.string() + " were simulated with a different forward/noise configuration or seed");
  Dataset d;
  d.b = read_csv(run / "data" / "b.csv").column("b");
  d.sigma = sim.at("sigma").get<double>();
  return d;
}

// ---- MAP ---------------------------------------------------------------------------

inline IasConfig ias_config(const ExperimentConfig& c, Index unknowns) {
  IasConfig cfg;
  cfg.iterations = c.ias_iterations;
  cfg.exact_mode = c.ias_exact;
  cfg.solver = SolverConfig::for_problem(unknowns);
  if (c.ias_max_inner > 0) cfg.solver.max_iters = c.ias_max_inner;
  cfg.solver.rel_residual_tol = c.ias_tolerance;
  return cfg;
}

inline IasResult run_map(const ExperimentConfig& c, const ForwardModel& f, const Dataset& d) {
  return ias_map(f.M, d.b, NoiseModel(d.sigma), c.hm, f.grouping, ias_config(c, f.M.cols()));
}

inline Localization write_map(const std::filesystem::path& run, const ForwardModel& f, const IasResult& r) {
  const auto dir = run / "map";
  const Vector amps = f.grouping.group_amplitudes(r.state.alpha);
  write_vector_csv(dir / "alpha.csv", "alpha", r.state.alpha);
  write_vector_csv(dir / "theta.csv", "theta", r.state.theta);
  const Index K = amps.size();
  Vector x(K), y(K), z(K), layer(K);
  for (Index k = 0; k < K; ++k) {
    const Vec3& p = f.geometry.locations[static_cast<std::size_t>(k)];
    x[k] = p.x(), y[k] = p.y(), z[k] = p.z();
    layer[k] = f.geometry.layer[static_cast<std::size_t>(k)];
  }
  write_columns_csv(dir / "groups.csv", {"x", "y", "z", "depth", "layer", "amplitude", "theta"},
                    {x, y, z, f.geometry.depth, layer, amps, r.state.theta}, "group");
  const Vector lp = Eigen::Map<const Vector>(r.log_posterior_history.data(), static_cast<Index>(r.log_posterior_history.size()));
  write_vector_csv(dir / "log_posterior.csv", "log_posterior", lp);
  write_layers_csv(dir / "layers.csv", layer_summary(amps, f));
  write_planar_slices(dir / "slices", amps, f);
  const Localization loc = localize(amps, f);
  const bool zero = amps.maxCoeff() == 0.0;
  write_json(dir / "estimate.json", {{"estimator", "map"},
                                     {"iterations", r.iterations_run},
                                     {"zero_estimate", zero},
                                     {"argmax", localization_json(loc)},
                                     {"truth", {{"location", vec3_json(f.truth_location)}, {"depth", f.truth_depth}}}});
  return loc;
}

// ---- MCMC ------------------------------------------------------------------------

inline ChainResult run_mcmc(const ExperimentConfig& c, const ForwardModel& f, const Dataset& d, const Vector& init_theta = {}) {
  RoiSpec roi;
  roi.roi_indices = f.roi_groups;
  ChainConfig cc = c.chain;
  cc.seed = c.seed;
  if (init_theta.size() > 0) cc.init_theta = init_theta;
  return sample_roi(f.M, d.b, NoiseModel(d.sigma), c.hm, f.grouping, roi, cc);
}

/// ROI restriction of the MAP variances written by `write_map`.
inline Vector map_init_theta(const std::filesystem::path& run, const ForwardModel& f) {
  const auto p = run / "map" / "theta.csv";
  if (!std::filesystem::exists(p)) throw FileError("mcmc init 'map' needs " + p.string() + " (run 'map' first)");
  const Vector theta = read_csv(p).column("theta");
  require_dims(theta.size() == f.grouping.num_groups(), "map/theta.csv does not match the forward model");
  Vector out(static_cast<Index>(f.roi_groups.size()));
  for (std::size_t i = 0; i < f.roi_groups.size(); ++i) out[static_cast<Index>(i)] = theta[f.roi_groups[i]];
  return out;
}

inline Localization write_mcmc(const std::filesystem::path& run, const ExperimentConfig& c, const ForwardModel& f,
                               const ChainResult& r) {
  const auto dir = run / "mcmc";
  const auto& s = r.summary;
  const Vector amps = r.chain.grouping.group_amplitudes(s.alpha_cm);
  const Localization loc = localize(amps, f, r.groups);
  Index top = 0;
  s.theta_cm.maxCoeff(&top);

  const Index K = amps.size();
  Vector gid(K), depth(K);
  for (Index k = 0; k < K; ++k) {
    gid[k] = static_cast<double>(r.groups[static_cast<std::size_t>(k)]);
    depth[k] = f.geometry.depth[r.groups[static_cast<std::size_t>(k)]];
  }
  write_columns_csv(dir / "cm.csv", {"group", "depth", "theta_cm", "amplitude_cm", "amplitude_variance"},
                    {gid, depth, s.theta_cm, amps, s.amplitude_variance}, "roi_group");
  Vector cid(static_cast<Index>(r.coefficients.size()));
  for (std::size_t i = 0; i < r.coefficients.size(); ++i) cid[static_cast<Index>(i)] = static_cast<double>(r.coefficients[i]);
  write_columns_csv(dir / "alpha_cm.csv", {"coefficient", "alpha_cm"}, {cid, s.alpha_cm}, "roi_coefficient");
  write_layers_csv(dir / "layers.csv", layer_summary(amps, f, r.groups));
  write_planar_slices(dir / "slices", amps, f, r.groups);

  write_chain_binary(dir / "chain_theta.bin", r.chain.theta, r.chain.iteration, r.groups, "theta");
  if (c.chain.store_alpha) write_chain_binary(dir / "chain_alpha.bin", r.chain.alpha, r.chain.iteration, r.coefficients, "alpha");
  if (c.chain_csv) write_chain_csv(dir / "chain_theta.csv", r.chain.theta, r.chain.iteration);

  // Sample history of the component with the largest posterior-mean variance.
  {
    const auto members = r.chain.grouping.members()[static_cast<std::size_t>(top)];
    auto f_out = detail::open_out(dir / "trace.csv");
    f_out << std::setprecision(std::numeric_limits<double>::max_digits10);
    f_out << "iteration,theta";
    if (c.chain.store_alpha)
      for (Index j : members) f_out << ",alpha_" << r.coefficients[static_cast<std::size_t>(j)];
    f_out << '\n';
    for (std::size_t i = 0; i < r.chain.size(); ++i) {
      f_out << r.chain.iteration[i] << ',' << r.chain.theta[i][top];
      if (c.chain.store_alpha)
        for (Index j : members) f_out << ',' << r.chain.alpha[i][j];
      f_out << '\n';
    }
  }

  nlohmann::json js = summary_json(s, r.groups);
  js["estimator"] = "cm";
  js["sample_size"] = c.chain.sample_size;
  js["thinning"] = c.chain.thinning;
  js["discard"] = c.chain.discard;
  js["seed"] = c.seed;
  js["argmax"] = localization_json(loc);
  js["max_theta_cm_group"] = r.groups[static_cast<std::size_t>(top)];
  js["truth"] = {{"location", vec3_json(f.truth_location)}, {"depth", f.truth_depth}};
  write_json(dir / "summary.json", js);
  return loc;
}

// ---- Summary report ------------------------------------------------------------

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

/// Surface-bias and depth checks for planar runs, from estimate files.
inline std::vector<Check> planar_checks(const ExperimentConfig& c, const nlohmann::json* map, const nlohmann::json* cm) {
  std::vector<Check> out;
  if (c.kind != ForwardKind::planar) return out;
  if (map) {
    const auto& a = (*map)["argmax"];
    const double dep = a["depth"].get<double>(), hor = a["horizontal_error"].get<double>();
    out.push_back({"map_depth_at_most_1cm", dep, 0.01, dep <= 0.01 + 1e-12});
    out.push_back({"map_horizontal_within_1cm", hor, 0.01, hor <= 0.01 + 1e-12});
  }
  if (cm) {
    const auto& a = (*cm)["argmax"];
    const double dep = a["depth"].get<double>();
    if (c.hm.r < 0) {
      const double tol = (*cm)["samples"].get<Index>() >= 50000 ? 0.01 : 0.015;
      const double err = a["depth_error"].get<double>();
      out.push_back({"cm_depth_error_within_" + std::string(tol > 0.01 ? "1.5cm" : "1cm"), err, tol, err <= tol + 1e-12});
    } else {
      out.push_back({"cm_depth_at_most_1cm", dep, 0.01, dep <= 0.01 + 1e-12});
    }
  }
  return out;
}

inline nlohmann::json summarize_run(const std::filesystem::path& run, const ExperimentConfig& c) {
  if (!std::filesystem::exists(run / "manifest.json")) throw FileError("no manifest.json in " + run.string() + " (empty or foreign run directory)");
  const auto map_p = run / "map" / "estimate.json", cm_p = run / "mcmc" / "summary.json";
  std::vector<std::string> missing;
  if (!std::filesystem::exists(map_p)) missing.push_back("map/estimate.json");
  if (!std::filesystem::exists(cm_p)) missing.push_back("mcmc/summary.json");
  if (missing.size() == 2) throw FileError("nothing to summarize in " + run.string() + "; missing: map/estimate.json, mcmc/summary.json");
  std::optional<nlohmann::json> map, cm;
  if (std::filesystem::exists(map_p)) map = read_json(map_p);
  if (std::filesystem::exists(cm_p)) cm = read_json(cm_p);

  nlohmann::json rep;
  rep["name"] = c.name;
  rep["missing"] = missing;
  rep["truth"] = map ? (*map)["truth"] : (*cm)["truth"];
  auto layers = [&](const std::filesystem::path& p) {
    const auto t = read_csv(p);
    return nlohmann::json{{"depth", to_std(t.column("depth"))}, {"energy", to_std(t.column("energy"))},
                          {"max_amplitude", to_std(t.column("max_amplitude"))}};
  };
  if (map) {
    rep["map"] = (*map)["argmax"];
    rep["map"]["layers"] = layers(run / "map" / "layers.csv");
  }
  if (cm) {
    rep["cm"] = (*cm)["argmax"];
    rep["cm"]["samples"] = (*cm)["samples"];
    rep["cm"]["layers"] = layers(run / "mcmc" / "layers.csv");
  }
  rep["checks"] = nlohmann::json::array();
  for (const auto& ch : planar_checks(c, map ? &*map : nullptr, cm ? &*cm : nullptr))
    rep["checks"].push_back({{"name", ch.name}, {"value", ch.value}, {"threshold", ch.threshold}, {"pass", ch.pass}});
  write_json(run / "summary" / "report.json", rep);

  auto f = detail::open_out(run / "summary" / "report.csv");
  f << std::setprecision(std::numeric_limits<double>::max_digits10);
  f << "estimator,group,x,y,z,depth,horizontal_error,depth_error\n";
  for (const char* key : {"map", "cm"}) {
    if (!rep.contains(key)) continue;
    const auto& a = rep[key];
    f << key << ',' << a["group"].get<Index>() << ',' << a["location"][0].get<double>() << ',' << a["location"][1].get<double>()
      << ',' << a["location"][2].get<double>() << ',' << a["depth"].get<double>() << ',' << a["horizontal_error"].get<double>()
      << ',' << a["depth_error"].get<double>() << '\n';
  }
  return rep;
}

// ---- Run directory bookkeeping ---------------------------------------------------

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run) : path_(run / ".lock") {
    std::filesystem::create_directories(run);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw FileError("run directory is locked by another command: " + path_.string() + " (remove it if stale)");
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Rewrites manifest.json: every file under the run directory with its size
/// and FNV-1a hash, plus per-command timing.
inline nlohmann::json update_manifest(const std::filesystem::path& run, const ExperimentConfig& c, const std::string& command,
                                      double seconds) {
  const auto mpath = run / "manifest.json";
  nlohmann::json m = std::filesystem::exists(mpath) ? read_json(mpath) : nlohmann::json::object();
  m["tool"] = "hbloc";
#ifdef HBLOC_VERSION
  m["version"] = HBLOC_VERSION;
#endif
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["config_hash"] = config_hash(c);
  m["seed"] = c.seed;
  m["commands"][command] = {{"seconds", seconds}, {"config_hash", config_hash(c)}};
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(run))
    if (e.is_regular_file()) {
      const auto rel = std::filesystem::relative(e.path(), run);
      if (rel == "manifest.json" || rel == ".lock") continue;
      files.push_back(rel);
    }
  std::sort(files.begin(), files.end());
  m["artifacts"] = nlohmann::json::array();
  for (const auto& rel : files)
    m["artifacts"].push_back({{"path", rel.generic_string()}, {"bytes", std::filesystem::file_size(run / rel)}, {"fnv1a64", file_hash(run / rel)}});
  write_json(mpath, m);
  return m;
}

}  // namespace hbloc
