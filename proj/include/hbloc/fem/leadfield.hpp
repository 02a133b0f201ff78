#pragma once

// Electric and magnetic lead fields from one sparse factorization of B.
//
// With X = B^{-1} C and H = G - C^T X (the Schur complement of B, SPD):
//   M_e = R H^{-1} X^T F,
//   M_m = W + V S^{-1} F,   S = B - C G^{-1} C^T,  S^{-1} = B^{-1} + X H^{-1} X^T,
// where W is the primary (Biot-Savart) field of the RT currents and V maps nodal
// potentials to the field of the volume current -sigma grad u.

#include "hbloc/fem/assembly.hpp"
#include "hbloc/io.hpp"

#include <Eigen/SparseCholesky>

#include <type_traits>

namespace hbloc::fem {

class FemSolver {
 public:
  explicit FemSolver(const FemSystem& sys) : sys_(sys) {
    if (sys.num_electrodes() < 1) throw DomainError("FEM solve needs at least one electrode (B is singular without one)");
    ldlt_.compute(sys.B);
    if (ldlt_.info() != Eigen::Success) throw NumericalError("sparse factorization of B failed");
    if (!(ldlt_.vectorD().minCoeff() > 0.0)) throw NumericalError("B is not positive definite");
    X_ = ldlt_.solve(sys.C);
    const Matrix H = sys.G - sys.C.transpose() * X_;
    h_.compute(H);
    if (h_.info() != Eigen::Success) throw NumericalError("electrode Schur complement is not positive definite");
  }

  const FemSystem& system() const { return sys_; }

  /// B^{-1} Y.
  Matrix solve_B(const Matrix& Y) const { return ldlt_.solve(Y); }

  /// (B - C G^{-1} C^T)^{-1} Y.
  Matrix solve_schur(const Matrix& Y) const {
    Matrix out = ldlt_.solve(Y);
    if (X_.cols() > 0) out += X_ * h_.solve(X_.transpose() * Y);
    return out;
  }

  /// Reduced electrode potentials for a nodal load r: upsilon = -H^{-1} X^T r.
  Matrix electrode_unknowns(const Matrix& r) const {
    if (X_.cols() == 0) return Matrix::Zero(0, r.cols());
    return -h_.solve(X_.transpose() * r);
  }

  Matrix electric_lead_field() const {
    if (X_.cols() == 0) return Matrix::Zero(sys_.num_electrodes(), sys_.num_sources());
    const Matrix XtF = (SparseMatrix(sys_.F.transpose()) * X_).transpose();
    return sys_.R * h_.solve(XtF);
  }

 private:
  const FemSystem& sys_;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  Matrix X_;
  Eigen::LLT<Matrix> h_;
};

inline Matrix electric_lead_field(const FemSystem& sys) { return FemSolver(sys).electric_lead_field(); }

namespace detail {

/// Sum over the four Gauss points of tet (p0..p3) of f(x) * |T|/4; tets whose
/// nodes come within 1e-9 m of `sensor` are split at the centroid once.
template <class Fn, class Result = std::invoke_result_t<Fn&, const Vec3&>>
Result tet_quadrature(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, const Vec3& sensor, Fn&& f,
                      bool allow_split = true) {
  const double vol = std::abs((p1 - p0).dot((p2 - p0).cross(p3 - p0))) / 6.0;
  const auto q = TetQuadrature::points(p0, p1, p2, p3);
  bool near = false;
  for (const auto& x : q) near = near || (x - sensor).norm() < 1e-9;
  if (near && allow_split) {
    const Vec3 c = 0.25 * (p0 + p1 + p2 + p3);
    return tet_quadrature(c, p1, p2, p3, sensor, f, false) + tet_quadrature(p0, c, p2, p3, sensor, f, false) +
           tet_quadrature(p0, p1, c, p3, sensor, f, false) + tet_quadrature(p0, p1, p2, c, sensor, f, false);
  }
  Result acc = f(q[0]);
  for (int i = 1; i < 4; ++i) acc += f(q[static_cast<std::size_t>(i)]);
  return acc * (vol / 4.0);
}

inline void check_sensors(const HeadMesh& mesh) {
  for (std::size_t s = 0; s < mesh.sensors.size(); ++s)
    if (point_in_mesh(mesh, mesh.sensors[s].position))
      throw DomainError("magnetometer " + std::to_string(s) + " lies inside the mesh");
}

}  // namespace detail

/// W_{i,k} = mu0/4pi int e_i . (w_k x (r_i - x)) / |r_i - x|^3 dx.
inline Matrix primary_field_matrix(const HeadMesh& mesh, const RtSourceSpace& rt) {
  const Index S = static_cast<Index>(mesh.sensors.size());
  Matrix W(S, rt.size());
  for (Index k = 0; k < rt.size(); ++k) {
    const auto& b = rt.basis[static_cast<std::size_t>(k)];
    for (Index i = 0; i < S; ++i) {
      const auto& sen = mesh.sensors[static_cast<std::size_t>(i)];
      double v = 0.0;
      for (int side : {1, -1}) {
        const Index t = side > 0 ? b.tet_plus : b.tet_minus;
        v += detail::tet_quadrature(mesh.vertex(t, 0), mesh.vertex(t, 1), mesh.vertex(t, 2), mesh.vertex(t, 3), sen.position,
                                    [&](const Vec3& x) {
                                      const Vec3 d = sen.position - x;
                                      const double r = d.norm();
                                      return sen.orientation.dot(rt_value(mesh, b, side, x).cross(d)) / (r * r * r);
                                    });
      }
      W(i, k) = kMu0Over4Pi * v;
    }
  }
  return W;
}

/// V_{i,j} = mu0/4pi sum_T sigma_T grad psi_j . (g_T x e_i), g_T = int_T (r_i - x)/|r_i - x|^3,
/// so that the volume-current field is -V zeta.
inline Matrix volume_field_matrix(const HeadMesh& mesh) {
  const Index S = static_cast<Index>(mesh.sensors.size());
  Matrix V = Matrix::Zero(S, mesh.num_nodes());
  for (Index t = 0; t < mesh.num_tets(); ++t) {
    const auto grad = basis_gradients(mesh, t);
    const double sigma = mesh.conductivity_of_tet(t);
    const auto& T = mesh.tets[static_cast<std::size_t>(t)];
    for (Index i = 0; i < S; ++i) {
      const auto& sen = mesh.sensors[static_cast<std::size_t>(i)];
      const Vec3 g = detail::tet_quadrature(mesh.vertex(t, 0), mesh.vertex(t, 1), mesh.vertex(t, 2), mesh.vertex(t, 3), sen.position,
                                            [&](const Vec3& x) -> Vec3 {
                                              const Vec3 d = sen.position - x;
                                              const double r = d.norm();
                                              return d / (r * r * r);
                                            });
      const Vec3 ge = g.cross(sen.orientation);
      for (int j = 0; j < 4; ++j) V(i, T[static_cast<std::size_t>(j)]) += kMu0Over4Pi * sigma * grad.row(j).dot(ge);
    }
  }
  return V;
}

struct MagneticParts {
  Matrix W, V;
};

inline MagneticParts magnetic_parts(const FemSystem& sys, const HeadMesh& mesh) {
  detail::check_sensors(mesh);
  return {primary_field_matrix(mesh, sys.rt), volume_field_matrix(mesh)};
}

inline Matrix magnetic_lead_field(const FemSolver& solver, const HeadMesh& mesh, const MagneticParts& parts) {
  const auto& sys = solver.system();
  if (mesh.sensors.empty()) return Matrix::Zero(0, sys.num_sources());
  // V S^{-1} F = (S^{-1} V^T)^T F with S symmetric.
  const Matrix SV = solver.solve_schur(parts.V.transpose());
  return parts.W + (SparseMatrix(sys.F.transpose()) * SV).transpose();
}

inline Matrix magnetic_lead_field(const FemSystem& sys, const HeadMesh& mesh) {
  const FemSolver solver(sys);
  return magnetic_lead_field(solver, mesh, magnetic_parts(sys, mesh));
}

struct ForwardResult {
  Vector U;       ///< electrode potentials (V)
  Vector field;   ///< magnetometer readings (T)
  Vector zeta;    ///< nodal potentials
};

/// Solves the block system for one coefficient vector.
inline ForwardResult forward_solve(const FemSolver& solver, const MagneticParts& parts, const Vector& alpha) {
  const auto& sys = solver.system();
  require_dims(alpha.size() == sys.num_sources(), "forward_solve: alpha does not match the RT space");
  const Vector r = -(sys.F * alpha);
  const Vector ups = solver.electrode_unknowns(r);
  ForwardResult out;
  out.zeta = solver.solve_B(r);
  if (ups.size() > 0) out.zeta -= solver.solve_B(sys.C * ups);
  out.U = sys.R * ups;
  out.field = parts.W * alpha - parts.V * out.zeta;
  return out;
}

struct LeadFields {
  Matrix electric, magnetic;
};

/// Both lead fields with a single factorization.
inline LeadFields compute_lead_fields(const FemSystem& sys, const HeadMesh& mesh) {
  const FemSolver solver(sys);
  LeadFields out;
  out.electric = solver.electric_lead_field();
  out.magnetic = magnetic_lead_field(solver, mesh, magnetic_parts(sys, mesh));
  return out;
}

inline void write_lead_field(const std::filesystem::path& path, const Matrix& M, const std::string& kind, const std::string& units,
                             const std::string& row_kind) {
  nlohmann::json h;
  h["kind"] = kind;
  h["units"] = units;
  h["row_ids"] = nlohmann::json::array();
  for (Index i = 0; i < M.rows(); ++i) h["row_ids"].push_back(row_kind + std::to_string(i));
  h["col_ids"] = {{"kind", "rt_face"}, {"count", M.cols()}};
  write_matrix_binary(path, M, h);
}

}  // namespace hbloc::fem
