#pragma once

// Lowest-order Raviart-Thomas source currents on the interior faces of the
// source domain. Basis function k lives on the two tets sharing face k:
//   w_k(x) =  (x - p_plus)  / (3 |T_plus|)   on T_plus,
//   w_k(x) = -(x - p_minus) / (3 |T_minus|)  on T_minus,
// where p_plus, p_minus are the vertices opposite the face. The normal flux
// through the face, oriented from T_plus to T_minus, is exactly one.

#include "hbloc/fem/mesh.hpp"

#include <Eigen/Dense>

namespace hbloc::fem {

struct RtBasis {
  Index face = -1;
  Index tet_plus = -1, tet_minus = -1;
  int opp_plus = -1, opp_minus = -1;  ///< local vertex opposite the face
};

struct RtSourceSpace {
  std::vector<RtBasis> basis;

  Index size() const { return static_cast<Index>(basis.size()); }
};

inline RtSourceSpace make_rt_space(const HeadMesh& mesh) {
  RtSourceSpace rt;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    if (face.tet[1] < 0) continue;
    if (mesh.tet_domain[static_cast<std::size_t>(face.tet[0])] != mesh.source_domain ||
        mesh.tet_domain[static_cast<std::size_t>(face.tet[1])] != mesh.source_domain)
      continue;
    rt.basis.push_back({static_cast<Index>(f), face.tet[0], face.tet[1], face.opposite[0], face.opposite[1]});
  }
  return rt;
}

/// Value of basis function b at x, evaluated with the formula of the given side (+1 or -1).
inline Vec3 rt_value(const HeadMesh& mesh, const RtBasis& b, int side, const Vec3& x) {
  if (side > 0) return (x - mesh.vertex(b.tet_plus, b.opp_plus)) / (3.0 * mesh.volume(b.tet_plus));
  return -(x - mesh.vertex(b.tet_minus, b.opp_minus)) / (3.0 * mesh.volume(b.tet_minus));
}

/// Constant divergence on each supporting tet.
inline double rt_divergence(const HeadMesh& mesh, const RtBasis& b, int side) {
  return side > 0 ? 1.0 / mesh.volume(b.tet_plus) : -1.0 / mesh.volume(b.tet_minus);
}

/// Integral of w over its support: (p_minus - p_plus) / 4 (A m for a unit coefficient).
inline Vec3 rt_moment(const HeadMesh& mesh, const RtBasis& b) {
  return 0.25 * (mesh.vertex(b.tet_minus, b.opp_minus) - mesh.vertex(b.tet_plus, b.opp_plus));
}

/// Midpoint of the face carrying the basis function.
inline Vec3 rt_center(const HeadMesh& mesh, const RtBasis& b) {
  const auto& f = mesh.faces[static_cast<std::size_t>(b.face)].nodes;
  return (mesh.nodes[static_cast<std::size_t>(f[0])] + mesh.nodes[static_cast<std::size_t>(f[1])] +
          mesh.nodes[static_cast<std::size_t>(f[2])]) /
         3.0;
}

/// Coefficients approximating a point current dipole with moment p at x0: the
/// minimum-norm combination of nearby basis functions whose total moment
/// equals p. The support is every basis function centered within `radius` of
/// x0, and at least the `min_count` nearest ones.
inline Vector rt_dipole(const HeadMesh& mesh, const RtSourceSpace& rt, const Vec3& x0, const Vec3& p, double radius = 0.0,
                        int min_count = 12) {
  if (rt.size() < 3) throw DomainError("rt_dipole: source space has fewer than 3 basis functions");
  if (!(radius >= 0.0)) throw DomainError("rt_dipole: radius must be >= 0");
  std::vector<std::pair<double, Index>> d;
  d.reserve(static_cast<std::size_t>(rt.size()));
  for (Index k = 0; k < rt.size(); ++k) d.emplace_back((rt_center(mesh, rt.basis[static_cast<std::size_t>(k)]) - x0).norm(), k);
  std::sort(d.begin(), d.end());
  std::size_t count = static_cast<std::size_t>(std::min<Index>(std::max(min_count, 3), rt.size()));
  while (count < d.size() && d[count].first <= radius) ++count;
  Eigen::Matrix<double, 3, Eigen::Dynamic> Mo(3, static_cast<Index>(count));
  for (std::size_t j = 0; j < count; ++j) Mo.col(static_cast<Index>(j)) = rt_moment(mesh, rt.basis[static_cast<std::size_t>(d[j].second)]);
  const Eigen::Matrix3d gram = Mo * Mo.transpose();
  Eigen::LDLT<Eigen::Matrix3d> ldlt(gram);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12)
    throw NumericalError("rt_dipole: nearby basis moments do not span 3D");
  const Vector a = Mo.transpose() * ldlt.solve(p);
  Vector alpha = Vector::Zero(rt.size());
  for (std::size_t j = 0; j < count; ++j) alpha[d[j].second] = a[static_cast<Index>(j)];
  return alpha;
}

}  // namespace hbloc::fem
