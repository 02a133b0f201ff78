#pragma once

// Tetrahedral head meshes: nodes, labelled tets, per-domain conductivities,
// surface electrodes and magnetometers, with face adjacency.

#include "hbloc/core.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace hbloc::fem {

using Vec3 = Eigen::Vector3d;
using Tet = std::array<Index, 4>;
using Tri = std::array<Index, 3>;

/// Malformed mesh document or inconsistent mesh data.
class MeshError : public DomainError {
 public:
  using DomainError::DomainError;
};

struct Domain {
  std::string name;
  double conductivity = 1.0;  ///< S/m
};

struct Electrode {
  std::vector<Tri> triangles;
  double impedance = 1.0;  ///< contact impedance, Ohm m^2
};

struct Magnetometer {
  Vec3 position;
  Vec3 orientation;  ///< unit vector
};

/// A face shared by two tets, or a boundary face (tet[1] == -1).
struct Face {
  Tri nodes;  ///< sorted node indices
  std::array<Index, 2> tet{-1, -1};
  /// Local index (0..3) of the vertex opposite the face in each tet.
  std::array<int, 2> opposite{-1, -1};
};

struct HeadMesh {
  std::vector<Vec3> nodes;
  std::vector<Tet> tets;
  std::vector<int> tet_domain;
  std::map<int, Domain> domains;
  std::vector<Electrode> electrodes;
  std::vector<Magnetometer> sensors;
  /// Domain that carries the source space.
  int source_domain = 0;

  // Derived by finalize().
  std::vector<Face> faces;
  std::vector<std::array<Index, 4>> tet_faces;

  Index num_nodes() const { return static_cast<Index>(nodes.size()); }
  Index num_tets() const { return static_cast<Index>(tets.size()); }
  Index num_electrodes() const { return static_cast<Index>(electrodes.size()); }

  double conductivity_of_tet(Index t) const { return domains.at(tet_domain[static_cast<std::size_t>(t)]).conductivity; }

  double signed_volume(Index t) const {
    const auto& T = tets[static_cast<std::size_t>(t)];
    const Vec3& a = nodes[static_cast<std::size_t>(T[0])];
    return (nodes[static_cast<std::size_t>(T[1])] - a)
               .dot((nodes[static_cast<std::size_t>(T[2])] - a).cross(nodes[static_cast<std::size_t>(T[3])] - a)) /
           6.0;
  }
  double volume(Index t) const { return std::abs(signed_volume(t)); }

  Vec3 vertex(Index t, int local) const {
    return nodes[static_cast<std::size_t>(tets[static_cast<std::size_t>(t)][static_cast<std::size_t>(local)])];
  }
  Vec3 centroid(Index t) const { return 0.25 * (vertex(t, 0) + vertex(t, 1) + vertex(t, 2) + vertex(t, 3)); }

  /// Sorts out orientation, builds face adjacency and validates everything.
  void finalize();
};

inline Tri sorted(Tri t) {
  std::sort(t.begin(), t.end());
  return t;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

inline void HeadMesh::finalize() {
  const Index N = num_nodes();
  if (tets.empty()) throw MeshError("mesh has no tetrahedra");
  if (tet_domain.size() != tets.size()) throw MeshError("tet_domain size does not match tets");
  for (const auto& [label, d] : domains)
    if (!(d.conductivity > 0.0)) throw MeshError("domain " + std::to_string(label) + ": conductivity must be > 0");
  for (std::size_t t = 0; t < tets.size(); ++t) {
    for (Index v : tets[t])
      if (v < 0 || v >= N) throw MeshError("tet " + std::to_string(t) + ": node index " + std::to_string(v) + " out of range");
    if (!domains.count(tet_domain[t]))
      throw MeshError("tet " + std::to_string(t) + ": unknown domain " + std::to_string(tet_domain[t]));
    const double v = signed_volume(static_cast<Index>(t));
    if (std::abs(v) < 1e-18)
      throw MeshError("tet " + std::to_string(t) + ": degenerate element (volume " + std::to_string(v) + " m^3)");
    if (v < 0.0) std::swap(tets[t][2], tets[t][3]);
  }

  std::map<Tri, Index> index;
  faces.clear();
  tet_faces.assign(tets.size(), {-1, -1, -1, -1});
  for (std::size_t t = 0; t < tets.size(); ++t) {
    for (int o = 0; o < 4; ++o) {
      Tri f{};
      int n = 0;
      for (int j = 0; j < 4; ++j)
        if (j != o) f[static_cast<std::size_t>(n++)] = tets[t][static_cast<std::size_t>(j)];
      f = sorted(f);
      auto [it, inserted] = index.emplace(f, static_cast<Index>(faces.size()));
      if (inserted) {
        Face face;
        face.nodes = f;
        face.tet[0] = static_cast<Index>(t);
        face.opposite[0] = o;
        faces.push_back(face);
      } else {
        Face& face = faces[static_cast<std::size_t>(it->second)];
        if (face.tet[1] >= 0) throw MeshError("face shared by more than two tets (non-manifold mesh)");
        face.tet[1] = static_cast<Index>(t);
        face.opposite[1] = o;
      }
      tet_faces[t][static_cast<std::size_t>(o)] = it->second;
    }
  }

  std::map<Tri, int> used;
  for (std::size_t e = 0; e < electrodes.size(); ++e) {
    const auto& el = electrodes[e];
    if (!(el.impedance > 0.0)) throw MeshError("electrode " + std::to_string(e) + ": impedance must be > 0");
    if (el.triangles.empty()) throw MeshError("electrode " + std::to_string(e) + ": no triangles");
    for (const auto& tri : el.triangles) {
      for (Index v : tri)
        if (v < 0 || v >= N) throw MeshError("electrode " + std::to_string(e) + ": node index out of range");
      const auto it = index.find(sorted(tri));
      if (it == index.end() || faces[static_cast<std::size_t>(it->second)].tet[1] >= 0)
        throw MeshError("electrode " + std::to_string(e) + ": triangle is not on the mesh boundary");
      if (!used.emplace(sorted(tri), static_cast<int>(e)).second)
        throw MeshError("electrode " + std::to_string(e) + ": triangle already belongs to another electrode");
    }
  }
  for (std::size_t s = 0; s < sensors.size(); ++s) {
    const double n = sensors[s].orientation.norm();
    if (!(n > 0.0)) throw MeshError("sensor " + std::to_string(s) + ": zero orientation");
    sensors[s].orientation /= n;
  }
}

/// Barycentric coordinates of x in tet t.
inline Eigen::Vector4d barycentric(const HeadMesh& m, Index t, const Vec3& x) {
  Eigen::Matrix3d J;
  const Vec3 a = m.vertex(t, 0);
  J << m.vertex(t, 1) - a, m.vertex(t, 2) - a, m.vertex(t, 3) - a;
  const Vec3 l = J.colPivHouseholderQr().solve(x - a);
  return {1.0 - l.sum(), l[0], l[1], l[2]};
}

/// True if the point lies inside (or on) any tet.
inline bool point_in_mesh(const HeadMesh& m, const Vec3& x, double tol = 1e-12) {
  for (Index t = 0; t < m.num_tets(); ++t) {
    Vec3 lo = m.vertex(t, 0), hi = lo;
    for (int j = 1; j < 4; ++j) {
      lo = lo.cwiseMin(m.vertex(t, j));
      hi = hi.cwiseMax(m.vertex(t, j));
    }
    if ((x.array() < lo.array() - tol).any() || (x.array() > hi.array() + tol).any()) continue;
    if (barycentric(m, t, x).minCoeff() >= -tol) return true;
  }
  return false;
}

// ---- JSON schema ------------------------------------------------------------
//
// {
//   "nodes": [[x, y, z], ...],                       meters
//   "tets": [[i, j, k, l, domain], ...],             0-based node indices, integer domain label
//   "domains": {"<label>": {"name": str, "conductivity": S/m}} or {"<label>": S/m},
//   "source_domain": label                            optional, default: domain named "brain", else the smallest label
//   "electrodes": [{"triangles": [[i, j, k], ...], "impedance": Ohm m^2}, ...],
//   "sensors": [{"position": [x, y, z], "orientation": [x, y, z]}, ...]
// }

namespace detail {

inline Vec3 vec3(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw MeshError(where + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline HeadMesh load_mesh(const nlohmann::json& doc) {
  HeadMesh m;
  try {
    for (std::size_t i = 0; i < doc.at("nodes").size(); ++i)
      m.nodes.push_back(detail::vec3(doc["nodes"][i], "nodes[" + std::to_string(i) + "]"));
    for (std::size_t i = 0; i < doc.at("tets").size(); ++i) {
      const auto& t = doc["tets"][i];
      if (!t.is_array() || t.size() != 5) throw MeshError("tets[" + std::to_string(i) + "]: expected [i, j, k, l, domain]");
      m.tets.push_back({t[0].get<Index>(), t[1].get<Index>(), t[2].get<Index>(), t[3].get<Index>()});
      m.tet_domain.push_back(t[4].get<int>());
    }
    for (const auto& [key, val] : doc.at("domains").items()) {
      Domain d;
      if (val.is_number()) {
        d.conductivity = val.get<double>();
        d.name = key;
      } else {
        d.conductivity = val.at("conductivity").get<double>();
        d.name = val.value("name", key);
      }
      m.domains[std::stoi(key)] = d;
    }
    if (doc.contains("electrodes"))
      for (const auto& e : doc["electrodes"]) {
        Electrode el;
        el.impedance = e.value("impedance", 1.0);
        for (const auto& t : e.at("triangles")) el.triangles.push_back({t.at(0).get<Index>(), t.at(1).get<Index>(), t.at(2).get<Index>()});
        m.electrodes.push_back(std::move(el));
      }
    if (doc.contains("sensors"))
      for (std::size_t i = 0; i < doc["sensors"].size(); ++i) {
        const auto& s = doc["sensors"][i];
        const std::string w = "sensors[" + std::to_string(i) + "]";
        m.sensors.push_back({detail::vec3(s.at("position"), w + ".position"), detail::vec3(s.at("orientation"), w + ".orientation")});
      }
  } catch (const nlohmann::json::exception& e) {
    throw MeshError(std::string("mesh document: ") + e.what());
  }
  if (m.domains.empty()) throw MeshError("mesh document: no domains");
  if (doc.contains("source_domain")) {
    m.source_domain = doc["source_domain"].get<int>();
  } else {
    m.source_domain = m.domains.begin()->first;
    for (const auto& [label, d] : m.domains)
      if (d.name == "brain") m.source_domain = label;
  }
  if (!m.domains.count(m.source_domain)) throw MeshError("source_domain is not a declared domain");
  m.finalize();
  return m;
}

inline nlohmann::json mesh_to_json(const HeadMesh& m) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& p : m.nodes) j["nodes"].push_back({p.x(), p.y(), p.z()});
  j["tets"] = nlohmann::json::array();
  for (std::size_t t = 0; t < m.tets.size(); ++t) {
    const auto& T = m.tets[t];
    j["tets"].push_back({T[0], T[1], T[2], T[3], m.tet_domain[t]});
  }
  for (const auto& [label, d] : m.domains)
    j["domains"][std::to_string(label)] = {{"name", d.name}, {"conductivity", d.conductivity}};
  j["source_domain"] = m.source_domain;
  j["electrodes"] = nlohmann::json::array();
  for (const auto& e : m.electrodes) {
    nlohmann::json tris = nlohmann::json::array();
    for (const auto& t : e.triangles) tris.push_back({t[0], t[1], t[2]});
    j["electrodes"].push_back({{"triangles", tris}, {"impedance", e.impedance}});
  }
  j["sensors"] = nlohmann::json::array();
  for (const auto& s : m.sensors)
    j["sensors"].push_back({{"position", {s.position.x(), s.position.y(), s.position.z()}},
                            {"orientation", {s.orientation.x(), s.orientation.y(), s.orientation.z()}}});
  return j;
}

/// Number of tets per domain label.
inline std::map<int, Index> domain_counts(const HeadMesh& m) {
  std::map<int, Index> c;
  for (int d : m.tet_domain) ++c[d];
  return c;
}

}  // namespace hbloc::fem
