#pragma once

// Layered-sphere test meshes. A (2n)^3 cube lattice is split into Kuhn
// tetrahedra and mapped radially onto the ball; the cube's sup-norm shells at
// integer lattice distances become the spherical layer interfaces.

#include "hbloc/fem/mesh.hpp"

#include <numbers>

namespace hbloc::fem {

struct SphereOptions {
  /// Outer radius of each layer, innermost first (m).
  std::vector<double> radii{0.09};
  std::vector<double> conductivities{0.33};
  std::vector<std::string> names{"brain"};
  /// Lattice cells from the center to the outer surface along an axis.
  int resolution = 8;
  int electrodes = 31;
  double electrode_angle = 0.15;  ///< angular radius of each patch (rad)
  double impedance = 1.0;
  int sensors = 32;
  double sensor_radius = 0.11;
  /// Index of the layer carrying the source space.
  int source_layer = 0;
};

/// Upper bound on generated tets.
inline constexpr Index kMaxSphereTets = 50000;

/// Brain, CSF, skull and scalp with the usual head-model conductivities.
inline SphereOptions four_layer_head_options(int resolution = 8) {
  SphereOptions o;
  o.radii = {0.078, 0.080, 0.085, 0.090};
  o.conductivities = {0.33, 1.0, 0.0042, 0.33};
  o.names = {"brain", "csf", "skull", "scalp"};
  o.resolution = resolution;
  return o;
}

/// Unit vectors spread evenly over the sphere (Fibonacci lattice).
inline std::vector<Vec3> fibonacci_sphere(int count) {
  std::vector<Vec3> out;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.emplace_back(r * std::cos(golden * i), r * std::sin(golden * i), z);
  }
  return out;
}

/// Lattice shell index (1..resolution) at which each layer ends.
inline std::vector<int> sphere_layer_cells(const SphereOptions& o) {
  const std::size_t m = o.radii.size();
  if (m == 0) throw DomainError("sphere mesh: no layers");
  if (o.conductivities.size() != m) throw DomainError("sphere mesh: one conductivity per layer required");
  if (!o.names.empty() && o.names.size() != m) throw DomainError("sphere mesh: one name per layer required");
  for (std::size_t j = 0; j < m; ++j) {
    if (!(o.radii[j] > 0.0) || (j > 0 && !(o.radii[j] > o.radii[j - 1])))
      throw DomainError("sphere mesh: radii must be positive and increasing");
  }
  if (o.resolution < 1) throw DomainError("sphere mesh: resolution must be >= 1");
  if (48LL * o.resolution * o.resolution * o.resolution > kMaxSphereTets)
    throw DomainError("sphere mesh: resolution " + std::to_string(o.resolution) + " exceeds the tet budget");
  std::vector<int> k(m);
  const double R = o.radii.back();
  k[m - 1] = o.resolution;
  for (std::size_t j = m - 1; j-- > 0;)
    k[j] = std::min(static_cast<int>(std::lround(o.resolution * o.radii[j] / R)), k[j + 1] - 1);
  if (k[0] < 1)
    throw DomainError("sphere mesh: degenerate layering, resolution " + std::to_string(o.resolution) + " is too coarse for " +
                      std::to_string(m) + " layers");
  return k;
}

/// Tets the generator places in each layer.
inline std::vector<Index> sphere_tet_counts(const SphereOptions& o) {
  const auto k = sphere_layer_cells(o);
  std::vector<Index> out;
  Index prev = 0;
  for (int kj : k) {
    const Index cube = static_cast<Index>(2 * kj) * (2 * kj) * (2 * kj);
    out.push_back(6 * (cube - prev));
    prev = cube;
  }
  return out;
}

inline HeadMesh make_sphere_mesh(const SphereOptions& o) {
  const auto k = sphere_layer_cells(o);
  const std::size_t m = k.size();
  const int n = o.resolution, side = 2 * n + 1;

  // Radial profile: sup-norm shell s (in lattice units) -> radius.
  auto rho = [&](double s) {
    double s0 = 0.0, r0 = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (s <= k[j] || j + 1 == m) return r0 + (o.radii[j] - r0) * (s - s0) / (k[j] - s0);
      s0 = k[j];
      r0 = o.radii[j];
    }
    return r0;
  };

  HeadMesh mesh;
  auto id = [&](int i, int j, int l) { return static_cast<Index>(((l + n) * side + (j + n)) * side + (i + n)); };
  for (int l = -n; l <= n; ++l)
    for (int j = -n; j <= n; ++j)
      for (int i = -n; i <= n; ++i) {
        const Vec3 p(i, j, l);
        const double s = p.lpNorm<Eigen::Infinity>();
        mesh.nodes.push_back(s > 0.0 ? Vec3(p / p.norm() * rho(s)) : Vec3::Zero());
      }

  static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int l = -n; l < n; ++l)
    for (int j = -n; j < n; ++j)
      for (int i = -n; i < n; ++i) {
        const int shell = std::max({std::abs(2 * i + 1), std::abs(2 * j + 1), std::abs(2 * l + 1)});  // 2*s of the cell center
        int layer = 0;
        while (2 * k[static_cast<std::size_t>(layer)] < shell) ++layer;
        for (const auto& pm : perms) {
          int c[3] = {i, j, l};
          Tet t{};
          t[0] = id(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[pm[s]];
            t[static_cast<std::size_t>(s + 1)] = id(c[0], c[1], c[2]);
          }
          mesh.tets.push_back(t);
          mesh.tet_domain.push_back(layer);
        }
      }
  for (std::size_t j = 0; j < m; ++j)
    mesh.domains[static_cast<int>(j)] = {o.names.empty() ? "layer" + std::to_string(j) : o.names[j], o.conductivities[j]};
  if (o.source_layer < 0 || o.source_layer >= static_cast<int>(m)) throw DomainError("sphere mesh: source_layer out of range");
  mesh.source_domain = o.source_layer;
  mesh.finalize();

  // Electrode patches: outer boundary triangles within the angular radius of a
  // center, each assigned to its nearest center; every patch gets at least the
  // triangle closest to its center.
  if (o.electrodes > 0) {
    if (!(o.impedance > 0.0)) throw DomainError("sphere mesh: impedance must be > 0");
    const auto centers = fibonacci_sphere(o.electrodes);
    std::vector<Tri> boundary;
    std::vector<Vec3> dir;
    for (const auto& f : mesh.faces) {
      if (f.tet[1] >= 0) continue;
      const auto& T = mesh.tets[static_cast<std::size_t>(f.tet[0])];
      Tri tri{};
      int c = 0;
      for (int v = 0; v < 4; ++v)
        if (v != f.opposite[0]) tri[static_cast<std::size_t>(c++)] = T[static_cast<std::size_t>(v)];
      boundary.push_back(tri);
      const Vec3 ctr = (mesh.nodes[static_cast<std::size_t>(tri[0])] + mesh.nodes[static_cast<std::size_t>(tri[1])] +
                        mesh.nodes[static_cast<std::size_t>(tri[2])]) /
                       3.0;
      dir.push_back(ctr.normalized());
    }
    mesh.electrodes.assign(centers.size(), Electrode{{}, o.impedance});
    const double cos_patch = std::cos(o.electrode_angle);
    std::vector<int> owner(boundary.size(), -1);
    for (std::size_t b = 0; b < boundary.size(); ++b) {
      int best = -1;
      double best_cos = -2.0;
      for (std::size_t e = 0; e < centers.size(); ++e) {
        const double c = dir[b].dot(centers[e]);
        if (c > best_cos) best_cos = c, best = static_cast<int>(e);
      }
      if (best_cos >= cos_patch) owner[b] = best;
    }
    for (std::size_t e = 0; e < centers.size(); ++e) {
      std::size_t nearest = 0;
      for (std::size_t b = 1; b < boundary.size(); ++b)
        if (dir[b].dot(centers[e]) > dir[nearest].dot(centers[e])) nearest = b;
      owner[nearest] = static_cast<int>(e);
    }
    for (std::size_t b = 0; b < boundary.size(); ++b)
      if (owner[b] >= 0) mesh.electrodes[static_cast<std::size_t>(owner[b])].triangles.push_back(boundary[b]);
    for (std::size_t e = 0; e < centers.size(); ++e)
      if (mesh.electrodes[e].triangles.empty())
        throw DomainError("sphere mesh: electrode " + std::to_string(e) + " received no triangles");
  }

  if (o.sensors > 0) {
    if (!(o.sensor_radius > o.radii.back() * 1.0001)) throw DomainError("sphere mesh: sensors must lie outside the sphere");
    for (const Vec3& u : fibonacci_sphere(o.sensors)) mesh.sensors.push_back({o.sensor_radius * u, u});
  }
  mesh.finalize();
  return mesh;
}

}  // namespace hbloc::fem
