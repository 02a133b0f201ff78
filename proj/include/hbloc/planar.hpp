#pragma once

// Half-space magnetic forward model with volume currents ignored: vertical
// magnetometers above a layered lattice of tangential current dipoles.

#include "hbloc/core.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <random>
#include <vector>

namespace hbloc {

using Vec3 = Eigen::Vector3d;

struct SensorGrid {
  std::vector<Vec3> positions;
  Vec3 orientation = Vec3::UnitZ();

  Index size() const { return static_cast<Index>(positions.size()); }
};

struct DipoleGrid {
  std::vector<Vec3> locations;
  Vec3 e1 = Vec3::UnitX();
  Vec3 e2 = Vec3::UnitY();
  /// Depth (m, positive downward) of each layer, and the layer of each location.
  std::vector<double> layer_depths;
  std::vector<int> layer_of;

  Index size() const { return static_cast<Index>(locations.size()); }
  Index num_coefficients() const { return 2 * size(); }
};

/// b_l = mu0/4pi sum_k sum_j o.(e_j x (x_l - y_k)) / |x_l - y_k|^3 alpha_k^j, with the
/// columns ordered [all e1 coefficients | all e2 coefficients].
inline Matrix build_planar_leadfield(const SensorGrid& sensors, const DipoleGrid& dipoles) {
  const Index L = sensors.size(), K = dipoles.size();
  Matrix M(L, 2 * K);
  const Vec3 o = sensors.orientation;
  // o.(e x d) = d.(o x e)
  const Vec3 c1 = o.cross(dipoles.e1), c2 = o.cross(dipoles.e2);
  for (Index k = 0; k < K; ++k) {
    const Vec3& y = dipoles.locations[static_cast<std::size_t>(k)];
    for (Index l = 0; l < L; ++l) {
      const Vec3 d = sensors.positions[static_cast<std::size_t>(l)] - y;
      const double r = d.norm();
      if (!(r > 0.0)) throw DomainError("build_planar_leadfield: sensor coincides with dipole " + std::to_string(k));
      const double s = kMu0Over4Pi / (r * r * r);
      M(l, k) = s * d.dot(c1);
      M(l, K + k) = s * d.dot(c2);
    }
  }
  return M;
}

/// Grouping that ties the two tangential components at each location.
inline VarianceGrouping planar_grouping(const DipoleGrid& dipoles) { return VarianceGrouping::blocked(dipoles.size(), 2); }

struct SimulatedData {
  Vector b;
  double sigma = 0.0;
};

/// sigma = noise_fraction * max|M alpha|; b = M alpha (+ sigma * N(0, I) when add_noise).
inline SimulatedData simulate_data(const Matrix& M, const Vector& alpha_true, double noise_fraction, bool add_noise,
                                   std::uint64_t seed) {
  require_dims(M.cols() == alpha_true.size(), "simulate_data: alpha size mismatch");
  if (!(noise_fraction >= 0.0)) throw DomainError("simulate_data: noise_fraction must be >= 0");
  SimulatedData out;
  out.b = M * alpha_true;
  const double peak = out.b.size() ? out.b.cwiseAbs().maxCoeff() : 0.0;
  out.sigma = noise_fraction * peak;
  if (noise_fraction > 0.0 && !(out.sigma > 0.0))
    throw DomainError("simulate_data: noiseless signal is zero, noise level would be zero");
  if (add_noise && out.sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Index i = 0; i < out.b.size(); ++i) out.b[i] += out.sigma * n(rng);
  }
  return out;
}

struct PlanarSetup {
  SensorGrid sensors;
  DipoleGrid dipoles;
  /// Single true dipole (location and tangential moment), off the lattice.
  DipoleGrid truth;
  Vector truth_moment;  ///< [alpha^1, alpha^2] of the true dipole
  std::vector<Index> roi_groups;
  int nx = 10, ny = 10;
  double spacing = 0.01;
  double sensor_height = 0.02;
};

struct PlanarOptions {
  int nx = 10, ny = 10;
  double spacing = 0.01;
  double sensor_height = 0.02;
  int layers = 9;
  double layer_step = 0.005;
  double true_depth = 0.035;
  Vec3 true_offset = Vec3::Zero();  ///< horizontal offset from the grid center
  Vector true_moment = (Vector(2) << 1.0, 0.0).finished();
  int roi_half_width = 3;  ///< ROI spans 2*half_width lattice columns in x and y
};

/// 10x10 vertical magnetometers 2 cm above the surface at 1 cm spacing,
/// nine dipole layers 0..4 cm deep every 0.5 cm, a true dipole 3.5 cm deep
/// under the grid center, and a 6x6-column ROI through all layers.
inline PlanarSetup make_planar_setup(const PlanarOptions& opt = {}) {
  PlanarSetup s;
  s.nx = opt.nx;
  s.ny = opt.ny;
  s.spacing = opt.spacing;
  s.sensor_height = opt.sensor_height;
  const double cx = 0.5 * (opt.nx - 1), cy = 0.5 * (opt.ny - 1);
  for (int iy = 0; iy < opt.ny; ++iy)
    for (int ix = 0; ix < opt.nx; ++ix)
      s.sensors.positions.emplace_back((ix - cx) * opt.spacing, (iy - cy) * opt.spacing, opt.sensor_height);
  for (int layer = 0; layer < opt.layers; ++layer) {
    const double depth = layer * opt.layer_step;
    s.dipoles.layer_depths.push_back(depth);
    for (int iy = 0; iy < opt.ny; ++iy)
      for (int ix = 0; ix < opt.nx; ++ix) {
        s.dipoles.locations.emplace_back((ix - cx) * opt.spacing, (iy - cy) * opt.spacing, -depth);
        s.dipoles.layer_of.push_back(layer);
      }
  }
  s.truth.locations.push_back(Vec3(0.0, 0.0, -opt.true_depth) + opt.true_offset);
  s.truth.layer_depths.push_back(opt.true_depth);
  s.truth.layer_of.push_back(0);
  s.truth_moment = opt.true_moment;

  // Lattice columns closest to the true source's surface projection.
  const Vec3 t = s.truth.locations[0];
  const int x0 = static_cast<int>(std::lround(t.x() / opt.spacing + cx - (opt.roi_half_width - 0.5)));
  const int y0 = static_cast<int>(std::lround(t.y() / opt.spacing + cy - (opt.roi_half_width - 0.5)));
  for (int layer = 0; layer < opt.layers; ++layer)
    for (int iy = std::max(0, y0); iy < std::min(opt.ny, y0 + 2 * opt.roi_half_width); ++iy)
      for (int ix = std::max(0, x0); ix < std::min(opt.nx, x0 + 2 * opt.roi_half_width); ++ix)
        s.roi_groups.push_back(static_cast<Index>(layer) * opt.nx * opt.ny + iy * opt.nx + ix);
  return s;
}

inline PlanarSetup make_default_planar_setup() { return make_planar_setup(PlanarOptions{}); }

/// Noiseless data of the true dipole under the given sensors.
inline Matrix truth_leadfield(const PlanarSetup& s) { return build_planar_leadfield(s.sensors, s.truth); }

/// Euclidean amplitude |q_k| per dipole location for a coefficient vector laid
/// out as [alpha^1 | alpha^2].
inline Vector dipole_amplitudes(const Vector& alpha) {
  const Index K = alpha.size() / 2;
  return (alpha.head(K).array().square() + alpha.tail(K).array().square()).sqrt();
}

// ---- JSON geometry documents ------------------------------------------------

inline nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw DomainError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json planar_geometry_json(const PlanarSetup& s) {
  nlohmann::json j;
  j["units"] = "m";
  j["sensors"]["orientation"] = vec3_json(s.sensors.orientation);
  for (const auto& p : s.sensors.positions) j["sensors"]["positions"].push_back(vec3_json(p));
  j["dipoles"]["e1"] = vec3_json(s.dipoles.e1);
  j["dipoles"]["e2"] = vec3_json(s.dipoles.e2);
  j["dipoles"]["layer_depths"] = s.dipoles.layer_depths;
  j["dipoles"]["layer_of"] = s.dipoles.layer_of;
  for (const auto& p : s.dipoles.locations) j["dipoles"]["locations"].push_back(vec3_json(p));
  j["truth"]["location"] = vec3_json(s.truth.locations.at(0));
  j["truth"]["moment"] = std::vector<double>(s.truth_moment.data(), s.truth_moment.data() + s.truth_moment.size());
  j["roi_groups"] = s.roi_groups;
  j["lattice"] = {{"nx", s.nx}, {"ny", s.ny}, {"spacing", s.spacing}, {"sensor_height", s.sensor_height}};
  return j;
}

inline PlanarSetup planar_geometry_from_json(const nlohmann::json& j) {
  PlanarSetup s;
  s.sensors.orientation = vec3_from(j.at("sensors").at("orientation"));
  for (const auto& p : j.at("sensors").at("positions")) s.sensors.positions.push_back(vec3_from(p));
  const auto& d = j.at("dipoles");
  s.dipoles.e1 = vec3_from(d.at("e1"));
  s.dipoles.e2 = vec3_from(d.at("e2"));
  s.dipoles.layer_depths = d.at("layer_depths").get<std::vector<double>>();
  s.dipoles.layer_of = d.at("layer_of").get<std::vector<int>>();
  for (const auto& p : d.at("locations")) s.dipoles.locations.push_back(vec3_from(p));
  s.truth.locations.push_back(vec3_from(j.at("truth").at("location")));
  s.truth.layer_depths.push_back(-s.truth.locations[0].z());
  s.truth.layer_of.push_back(0);
  const auto m = j.at("truth").at("moment").get<std::vector<double>>();
  s.truth_moment = Eigen::Map<const Vector>(m.data(), static_cast<Index>(m.size()));
  s.roi_groups = j.at("roi_groups").get<std::vector<Index>>();
  const auto& lat = j.at("lattice");
  s.nx = lat.at("nx");
  s.ny = lat.at("ny");
  s.spacing = lat.at("spacing");
  s.sensor_height = lat.at("sensor_height");
  if (s.dipoles.layer_of.size() != s.dipoles.locations.size())
    throw DomainError("planar geometry: layer_of does not match locations");
  return s;
}

}  // namespace hbloc
