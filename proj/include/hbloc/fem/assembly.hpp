#pragma once

// Complete electrode model matrices for linear Lagrange potentials and
// Raviart-Thomas sources.
//
// Unknowns are the nodal potentials zeta and the reduced electrode potentials
// upsilon, with electrode voltages U = R upsilon (so sum U = 0). For source
// coefficients alpha they solve
//   [ B   C ] [zeta   ]   [ -F alpha ]
//   [ C^T G ] [upsilon] = [    0     ].

#include "hbloc/fem/rt.hpp"

#include <Eigen/Sparse>

namespace hbloc::fem {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Four-point Gauss rule on a tetrahedron (barycentric nodes, equal weights 1/4).
struct TetQuadrature {
  static constexpr double a = 0.5854101966249685;
  static constexpr double b = 0.1381966011250105;

  static std::array<Vec3, 4> points(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
    return {a * p0 + b * (p1 + p2 + p3), a * p1 + b * (p0 + p2 + p3), a * p2 + b * (p0 + p1 + p3),
            a * p3 + b * (p0 + p1 + p2)};
  }
};

/// Gradients of the four barycentric basis functions (rows) of tet t.
inline Eigen::Matrix<double, 4, 3> basis_gradients(const HeadMesh& mesh, Index t) {
  Eigen::Matrix3d J;
  const Vec3 a = mesh.vertex(t, 0);
  J.col(0) = mesh.vertex(t, 1) - a;
  J.col(1) = mesh.vertex(t, 2) - a;
  J.col(2) = mesh.vertex(t, 3) - a;
  const Eigen::Matrix3d Jinv = J.inverse();
  Eigen::Matrix<double, 4, 3> g;
  g.bottomRows<3>() = Jinv;
  g.row(0) = -Jinv.colwise().sum();
  return g;
}

struct FemSystem {
  SparseMatrix stiffness;  ///< sum_T sigma_T grad psi_i . grad psi_j |T|
  SparseMatrix B;          ///< stiffness plus electrode boundary mass
  Matrix C;                ///< N_u x (L-1)
  Matrix G;                ///< (L-1) x (L-1)
  SparseMatrix F;          ///< N_u x N_J
  Matrix R;                ///< L x (L-1)
  Vector electrode_area;
  RtSourceSpace rt;

  Index num_nodes() const { return B.rows(); }
  Index num_electrodes() const { return R.rows(); }
  Index num_sources() const { return F.cols(); }
};

inline void check_elements(const HeadMesh& mesh) {
  for (Index t = 0; t < mesh.num_tets(); ++t)
    if (!(mesh.volume(t) >= 1e-18))
      throw MeshError("degenerate element: tet " + std::to_string(t) + " has volume " + std::to_string(mesh.volume(t)) + " m^3");
}

inline FemSystem assemble_system(const HeadMesh& mesh) {
  check_elements(mesh);
  FemSystem sys;
  const Index N = mesh.num_nodes(), L = mesh.num_electrodes();
  std::vector<Triplet> kt, bt;
  kt.reserve(static_cast<std::size_t>(16 * mesh.num_tets()));
  for (Index t = 0; t < mesh.num_tets(); ++t) {
    const auto g = basis_gradients(mesh, t);
    const Eigen::Matrix4d k = mesh.conductivity_of_tet(t) * mesh.volume(t) * g * g.transpose();
    const auto& T = mesh.tets[static_cast<std::size_t>(t)];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) kt.emplace_back(T[static_cast<std::size_t>(i)], T[static_cast<std::size_t>(j)], k(i, j));
  }
  sys.stiffness.resize(N, N);
  sys.stiffness.setFromTriplets(kt.begin(), kt.end());

  sys.electrode_area = Vector::Zero(L);
  Matrix load = Matrix::Zero(N, L);  // (1/z_l) int_{e_l} psi_i
  for (Index l = 0; l < L; ++l) {
    const auto& el = mesh.electrodes[static_cast<std::size_t>(l)];
    for (const auto& tri : el.triangles) {
      const double area = triangle_area(mesh.nodes[static_cast<std::size_t>(tri[0])], mesh.nodes[static_cast<std::size_t>(tri[1])],
                                        mesh.nodes[static_cast<std::size_t>(tri[2])]);
      sys.electrode_area[l] += area;
      for (int i = 0; i < 3; ++i) {
        load(tri[static_cast<std::size_t>(i)], l) += area / 3.0 / el.impedance;
        for (int j = 0; j < 3; ++j)
          bt.emplace_back(tri[static_cast<std::size_t>(i)], tri[static_cast<std::size_t>(j)], area / 12.0 * (i == j ? 2.0 : 1.0) / el.impedance);
      }
    }
  }
  SparseMatrix mass(N, N);
  mass.setFromTriplets(bt.begin(), bt.end());
  sys.B = sys.stiffness + mass;

  const Index Lr = std::max<Index>(L - 1, 0);
  sys.R = Matrix::Zero(L, Lr);
  sys.C = Matrix::Zero(N, Lr);
  sys.G = Matrix::Zero(Lr, Lr);
  for (Index j = 0; j < Lr; ++j) {
    sys.R(0, j) = 1.0;
    sys.R(j + 1, j) = -1.0;
    sys.C.col(j) = -load.col(0) + load.col(j + 1);
  }
  if (L > 0) {
    const double z1 = mesh.electrodes[0].impedance;
    sys.G.setConstant(sys.electrode_area[0] / z1);
    for (Index j = 0; j < Lr; ++j) sys.G(j, j) += sys.electrode_area[j + 1] / mesh.electrodes[static_cast<std::size_t>(j + 1)].impedance;
  }

  sys.rt = make_rt_space(mesh);
  std::vector<Triplet> ft;
  ft.reserve(static_cast<std::size_t>(8 * sys.rt.size()));
  for (Index k = 0; k < sys.rt.size(); ++k) {
    const auto& b = sys.rt.basis[static_cast<std::size_t>(k)];
    // div w is constant and sum psi_i integrates to |T|/4 per vertex.
    for (int side : {1, -1}) {
      const Index t = side > 0 ? b.tet_plus : b.tet_minus;
      const double v = rt_divergence(mesh, b, side) * mesh.volume(t) / 4.0;
      for (Index node : mesh.tets[static_cast<std::size_t>(t)]) ft.emplace_back(node, k, v);
    }
  }
  sys.F.resize(N, sys.rt.size());
  sys.F.setFromTriplets(ft.begin(), ft.end());
  return sys;
}

/// The full symmetric block matrix [B C; C^T G] (for small meshes and checks).
inline Matrix block_matrix(const FemSystem& sys) {
  const Index N = sys.num_nodes(), Lr = sys.G.rows();
  Matrix A(N + Lr, N + Lr);
  A.topLeftCorner(N, N) = Matrix(sys.B);
  A.topRightCorner(N, Lr) = sys.C;
  A.bottomLeftCorner(Lr, N) = sys.C.transpose();
  A.bottomRightCorner(Lr, Lr) = sys.G;
  return A;
}

}  // namespace hbloc::fem
