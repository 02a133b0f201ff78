#include "hbloc/fem/leadfield.hpp"
#include "hbloc/fem/sphere.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace hbloc;
using namespace hbloc::fem;

namespace {

nlohmann::json single_tet_doc(double a) {
  // Regular tetrahedron with edge a.
  const double h = a / 2, z = a / (2 * std::sqrt(2.0));
  return {{"nodes", {{h, 0, -z}, {-h, 0, -z}, {0, h, z}, {0, -h, z}}},
          {"tets", {{0, 1, 2, 3, 1}}},
          {"domains", {{"1", 0.33}}}};
}

nlohmann::json two_tet_doc() {
  return {{"nodes", {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}}},
          {"tets", {{0, 1, 2, 3, 0}, {1, 2, 3, 4, 0}}},
          {"domains", {{"0", {{"name", "brain"}, {"conductivity", 1.0}}}}}};
}

double rel_max(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff(); }

/// Homogeneous sphere with six axis-aligned electrodes (inversion symmetric)
/// and two layers, small enough for dense oracles.
HeadMesh small_mesh(int resolution, int layers = 1) {
  SphereOptions o;
  if (layers == 2) {
    o.radii = {0.05, 0.09};
    o.conductivities = {0.33, 0.1};
    o.names = {"brain", "outer"};
  }
  o.resolution = resolution;
  o.electrodes = 0;
  o.sensors = 6;
  HeadMesh mesh = make_sphere_mesh(o);
  const Vec3 axes[6] = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
  mesh.electrodes.assign(6, Electrode{{}, 1.0});
  for (const auto& f : mesh.faces) {
    if (f.tet[1] >= 0) continue;
    const Vec3 c = (mesh.nodes[static_cast<std::size_t>(f.nodes[0])] + mesh.nodes[static_cast<std::size_t>(f.nodes[1])] +
                    mesh.nodes[static_cast<std::size_t>(f.nodes[2])])
                       .normalized();
    for (int e = 0; e < 6; ++e)
      if (c.dot(axes[e]) > 0.8) mesh.electrodes[static_cast<std::size_t>(e)].triangles.push_back(f.nodes);
  }
  mesh.finalize();
  return mesh;
}

struct BlockOracle {
  Matrix electric, magnetic, zeta;
};

/// Dense solve of [B C; C^T G][zeta; ups] = [-F alpha; 0] column by column.
BlockOracle block_oracle(const FemSystem& sys, const MagneticParts& parts, const Matrix& alpha) {
  const Index N = sys.num_nodes(), Lr = sys.G.rows();
  const Matrix A = block_matrix(sys);
  Matrix rhs = Matrix::Zero(N + Lr, alpha.cols());
  rhs.topRows(N) = -(Matrix(sys.F) * alpha);
  const Matrix sol = A.partialPivLu().solve(rhs);
  BlockOracle o;
  o.zeta = sol.topRows(N);
  o.electric = sys.R * sol.bottomRows(Lr);
  o.magnetic = parts.W * alpha - parts.V * o.zeta;
  return o;
}

}  // namespace

// ---- Mesh loading ------------------------------------------------------------

TEST(Mesh, RegularTetVolume) {
  const double a = 0.02;
  const HeadMesh m = load_mesh(single_tet_doc(a));
  ASSERT_EQ(m.num_tets(), 1);
  EXPECT_NEAR(m.volume(0), a * a * a / (6.0 * std::sqrt(2.0)), 1e-18);
  EXPECT_GT(m.signed_volume(0), 0.0);
  EXPECT_EQ(m.faces.size(), 4u);
}

TEST(Mesh, NegativeOrientationIsFixed) {
  auto doc = single_tet_doc(0.02);
  doc["tets"][0] = {1, 0, 2, 3, 1};
  const HeadMesh m = load_mesh(doc);
  EXPECT_GT(m.signed_volume(0), 0.0);
}

TEST(Mesh, TwoTetsShareOneFace) {
  const HeadMesh m = load_mesh(two_tet_doc());
  EXPECT_EQ(m.faces.size(), 7u);
  int shared = 0;
  for (const auto& f : m.faces)
    if (f.tet[1] >= 0) {
      ++shared;
      EXPECT_EQ(f.nodes, (Tri{1, 2, 3}));
      EXPECT_EQ(m.tets[static_cast<std::size_t>(f.tet[0])][static_cast<std::size_t>(f.opposite[0])], 0);
      EXPECT_EQ(m.tets[static_cast<std::size_t>(f.tet[1])][static_cast<std::size_t>(f.opposite[1])], 4);
    }
  EXPECT_EQ(shared, 1);
  EXPECT_EQ(m.source_domain, 0);
}

TEST(Mesh, RejectsInvalidDocuments) {
  auto dangling = two_tet_doc();
  dangling["tets"][1][3] = 9;
  EXPECT_THROW(load_mesh(dangling), MeshError);

  auto bad_sigma = two_tet_doc();
  bad_sigma["domains"]["0"]["conductivity"] = 0.0;
  EXPECT_THROW(load_mesh(bad_sigma), MeshError);

  auto unknown_domain = two_tet_doc();
  unknown_domain["tets"][0][4] = 7;
  EXPECT_THROW(load_mesh(unknown_domain), MeshError);

  auto interior = two_tet_doc();
  interior["electrodes"] = {{{"triangles", {{1, 2, 3}}}, {"impedance", 1.0}}};
  EXPECT_THROW(load_mesh(interior), MeshError);

  auto bad_z = two_tet_doc();
  bad_z["electrodes"] = {{{"triangles", {{0, 1, 2}}}, {"impedance", -1.0}}};
  EXPECT_THROW(load_mesh(bad_z), MeshError);

  auto flat = two_tet_doc();
  flat["nodes"][3] = {0.5, 0.5, 0.0};
  flat["nodes"][4] = {1, 1, 0};
  EXPECT_THROW(load_mesh(flat), MeshError);

  EXPECT_THROW(load_mesh(nlohmann::json{{"nodes", nlohmann::json::array()}}), MeshError);
}

TEST(Mesh, DegenerateTetIsNamed) {
  auto doc = two_tet_doc();
  doc["nodes"][4] = {1e-7, 1e-7, 1e-7};
  doc["nodes"][3] = {0, 0, 1e-7};
  doc["nodes"][2] = {0, 1e-7, 0};
  doc["nodes"][1] = {1e-7, 0, 0};
  try {
    load_mesh(doc);
    FAIL() << "expected MeshError";
  } catch (const MeshError& e) {
    EXPECT_NE(std::string(e.what()).find("tet 0"), std::string::npos) << e.what();
  }
}

TEST(Mesh, JsonRoundTripKeepsDomainCounts) {
  SphereOptions o;
  o.radii = {0.07, 0.08, 0.09};
  o.conductivities = {0.33, 0.0042, 0.33};
  o.names = {"brain", "skull", "scalp"};
  o.resolution = 5;
  const HeadMesh gen = make_sphere_mesh(o);
  const HeadMesh m = load_mesh(mesh_to_json(gen));
  const auto expected = sphere_tet_counts(o);
  const auto counts = domain_counts(m);
  ASSERT_EQ(counts.size(), 3u);
  for (int d = 0; d < 3; ++d) EXPECT_EQ(counts.at(d), expected[static_cast<std::size_t>(d)]);
  EXPECT_EQ(m.num_electrodes(), gen.num_electrodes());
  EXPECT_EQ(m.sensors.size(), gen.sensors.size());
  EXPECT_EQ(m.source_domain, 0);
  EXPECT_EQ(m.domains.at(1).name, "skull");
}

// ---- Sphere generator ------------------------------------------------------

TEST(Sphere, SingleLayerIsOneDomain) {
  SphereOptions o;
  o.resolution = 2;
  const HeadMesh m = make_sphere_mesh(o);
  for (int d : m.tet_domain) EXPECT_EQ(d, 0);
  for (Index t = 0; t < m.num_tets(); ++t) EXPECT_GT(m.signed_volume(t), 0.0);
  double vol = 0.0;
  for (Index t = 0; t < m.num_tets(); ++t) vol += m.volume(t);
  EXPECT_NEAR(vol, 4.0 / 3.0 * M_PI * std::pow(0.09, 3), 0.25 * 4.0 / 3.0 * M_PI * std::pow(0.09, 3));
}

TEST(Sphere, TetCountGrowsEightfold) {
  SphereOptions o;
  Index prev = 0;
  for (int n : {1, 2, 4, 8}) {
    o.resolution = n;
    const HeadMesh m = make_sphere_mesh(o);
    EXPECT_EQ(m.num_tets(), 48 * n * n * n);
    if (prev > 0) EXPECT_EQ(m.num_tets(), 8 * prev);
    prev = m.num_tets();
  }
  o.resolution = 11;
  EXPECT_THROW(make_sphere_mesh(o), DomainError);
}

TEST(Sphere, FourLayerConductivities) {
  const HeadMesh m = make_sphere_mesh(four_layer_head_options(8));
  EXPECT_DOUBLE_EQ(m.domains.at(0).conductivity, 0.33);    // brain
  EXPECT_DOUBLE_EQ(m.domains.at(1).conductivity, 1.0);     // CSF
  EXPECT_DOUBLE_EQ(m.domains.at(2).conductivity, 0.0042);  // skull
  EXPECT_DOUBLE_EQ(m.domains.at(3).conductivity, 0.33);    // scalp
  EXPECT_EQ(m.domains.at(0).name, "brain");
  EXPECT_EQ(m.domains.at(3).name, "scalp");
  const auto expected = sphere_tet_counts(four_layer_head_options(8));
  const auto counts = domain_counts(m);
  for (int d = 0; d < 4; ++d) EXPECT_EQ(counts.at(d), expected[static_cast<std::size_t>(d)]);
  // Every tet lies inside the outer radius of its layer.
  const std::vector<double> radii{0.078, 0.080, 0.085, 0.090};
  for (Index t = 0; t < m.num_tets(); ++t)
    for (int v = 0; v < 4; ++v)
      EXPECT_LE(m.vertex(t, v).norm(), radii[static_cast<std::size_t>(m.tet_domain[static_cast<std::size_t>(t)])] * (1 + 1e-12));
}

TEST(Sphere, RejectsDegenerateLayering) {
  SphereOptions o = four_layer_head_options(3);
  EXPECT_THROW(make_sphere_mesh(o), DomainError);
  o = four_layer_head_options(8);
  o.radii = {0.08, 0.07, 0.085, 0.09};
  EXPECT_THROW(make_sphere_mesh(o), DomainError);
}

TEST(Sphere, ElectrodesAndSensors) {
  SphereOptions o;
  o.resolution = 6;
  const HeadMesh m = make_sphere_mesh(o);
  EXPECT_EQ(m.num_electrodes(), 31);
  for (const auto& e : m.electrodes) {
    EXPECT_FALSE(e.triangles.empty());
    EXPECT_DOUBLE_EQ(e.impedance, 1.0);
  }
  ASSERT_EQ(m.sensors.size(), 32u);
  for (const auto& s : m.sensors) {
    EXPECT_NEAR(s.position.norm(), 0.11, 1e-12);
    EXPECT_NEAR(s.orientation.dot(s.position.normalized()), 1.0, 1e-12);
  }
}

// ---- Assembly ------------------------------------------------------------------

TEST(Assembly, UnitTetStiffnessMatchesHandComputation) {
  const nlohmann::json doc = {{"nodes", {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}},
                              {"tets", {{0, 1, 2, 3, 0}}},
                              {"domains", {{"0", 1.0}}}};
  const FemSystem sys = assemble_system(load_mesh(doc));
  Eigen::Matrix4d expected;
  expected << 3, -1, -1, -1, -1, 1, 0, 0, -1, 0, 1, 0, -1, 0, 0, 1;
  expected /= 6.0;
  EXPECT_LT((Matrix(sys.stiffness) - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((Matrix(sys.B) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Assembly, ConstantsLieInTheStiffnessKernel) {
  const HeadMesh m = make_sphere_mesh(four_layer_head_options(4));
  const FemSystem sys = assemble_system(m);
  const Vector one = Vector::Ones(sys.num_nodes());
  const Vector k1 = sys.stiffness * one;
  EXPECT_LT(k1.cwiseAbs().maxCoeff(), 1e-12 * Matrix(sys.stiffness).cwiseAbs().maxCoeff());
  // B 1 reduces to the electrode boundary terms (1/z) int psi_i.
  Vector boundary = Vector::Zero(sys.num_nodes());
  for (const auto& e : m.electrodes)
    for (const auto& tri : e.triangles) {
      const double area = triangle_area(m.nodes[static_cast<std::size_t>(tri[0])], m.nodes[static_cast<std::size_t>(tri[1])],
                                        m.nodes[static_cast<std::size_t>(tri[2])]);
      for (Index v : tri) boundary[v] += area / 3.0 / e.impedance;
    }
  EXPECT_GT(boundary.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((sys.B * one - boundary).cwiseAbs().maxCoeff(), 1e-12 * Matrix(sys.B).cwiseAbs().maxCoeff());
}

TEST(Assembly, FColumnsFollowPartitionOfUnity) {
  const HeadMesh m = make_sphere_mesh(four_layer_head_options(4));
  const FemSystem sys = assemble_system(m);
  ASSERT_GT(sys.num_sources(), 0);
  const Matrix F(sys.F);
  for (Index k = 0; k < sys.num_sources(); k += 7) {
    const auto& b = sys.rt.basis[static_cast<std::size_t>(k)];
    Vector scattered = Vector::Zero(sys.num_nodes());
    for (int side : {1, -1}) {
      const Index t = side > 0 ? b.tet_plus : b.tet_minus;
      // int_T (div w) psi_i by the four-point rule, with psi_i the barycentric coordinates.
      const auto q = TetQuadrature::points(m.vertex(t, 0), m.vertex(t, 1), m.vertex(t, 2), m.vertex(t, 3));
      Eigen::Vector4d local = Eigen::Vector4d::Zero();
      for (const auto& x : q) local += rt_divergence(m, b, side) * m.volume(t) / 4.0 * barycentric(m, t, x);
      EXPECT_NEAR(local.sum(), rt_divergence(m, b, side) * m.volume(t), 1e-12);
      EXPECT_NEAR(local.sum(), side, 1e-12);
      for (int i = 0; i < 4; ++i) scattered[m.tets[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]] += local[i];
    }
    EXPECT_LT((F.col(k) - scattered).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(F.col(k).sum(), 0.0, 1e-12);
  }
}

TEST(Assembly, SymmetricPositiveDefinite) {
  const HeadMesh m = make_sphere_mesh(four_layer_head_options(4));
  const FemSystem sys = assemble_system(m);
  const Matrix B(sys.B);
  EXPECT_LT((B - B.transpose()).cwiseAbs().maxCoeff(), 1e-12 * B.cwiseAbs().maxCoeff());
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(sys.B);
  ASSERT_EQ(ldlt.info(), Eigen::Success);
  EXPECT_GT(ldlt.vectorD().minCoeff(), 0.0);
  EXPECT_EQ(sys.G.llt().info(), Eigen::Success);
  const Matrix A = block_matrix(sys);
  EXPECT_LT((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-12 * A.cwiseAbs().maxCoeff());
  EXPECT_EQ(sys.R.rows(), 31);
  for (Index j = 0; j < sys.R.cols(); ++j) {
    EXPECT_EQ(sys.R(0, j), 1.0);
    EXPECT_EQ(sys.R(j + 1, j), -1.0);
    EXPECT_EQ(sys.R.col(j).sum(), 0.0);
  }
}

TEST(Assembly, RtFunctionsAreDivergenceConforming) {
  const HeadMesh m = make_sphere_mesh(four_layer_head_options(4));
  const RtSourceSpace rt = make_rt_space(m);
  ASSERT_GT(rt.size(), 0);
  for (const auto& b : rt.basis) {
    ASSERT_EQ(m.tet_domain[static_cast<std::size_t>(b.tet_plus)], m.source_domain);
    ASSERT_EQ(m.tet_domain[static_cast<std::size_t>(b.tet_minus)], m.source_domain);
    const auto& f = m.faces[static_cast<std::size_t>(b.face)].nodes;
    const Vec3 a = m.nodes[static_cast<std::size_t>(f[0])], c = m.nodes[static_cast<std::size_t>(f[1])],
               d = m.nodes[static_cast<std::size_t>(f[2])];
    Vec3 n = (c - a).cross(d - a);  // |n| = 2 area
    if (n.dot(a - m.vertex(b.tet_plus, b.opp_plus)) < 0) n = -n;  // from T+ to T-
    // w is affine on each side, so the flux equals w(centroid) . n area.
    const Vec3 ctr = (a + c + d) / 3.0;
    const double flux_plus = 0.5 * rt_value(m, b, 1, ctr).dot(n);
    const double flux_minus = 0.5 * rt_value(m, b, -1, ctr).dot(n);
    EXPECT_NEAR(flux_plus, 1.0, 1e-12);
    EXPECT_NEAR(flux_minus, 1.0, 1e-12);
    // Normal component matches pointwise on the face, not just on average.
    EXPECT_NEAR(rt_value(m, b, 1, a).dot(n), rt_value(m, b, -1, a).dot(n), 1e-12 * std::abs(rt_value(m, b, 1, a).dot(n)) + 1e-9);
    // Divergence theorem on T+: total outward flux equals div * |T|.
    EXPECT_NEAR(rt_divergence(m, b, 1) * m.volume(b.tet_plus), 1.0, 1e-12);
    EXPECT_NEAR(rt_divergence(m, b, -1) * m.volume(b.tet_minus), -1.0, 1e-12);
  }
}

TEST(Assembly, RtDipoleHasRequestedMoment) {
  const HeadMesh m = make_sphere_mesh(four_layer_head_options(6));
  const RtSourceSpace rt = make_rt_space(m);
  const Vec3 p(1e-6, -2e-6, 0.5e-6);
  const Vector alpha = rt_dipole(m, rt, Vec3(0.01, 0.02, 0.03), p, 0.01);
  Vec3 total = Vec3::Zero();
  for (Index k = 0; k < rt.size(); ++k)
    if (alpha[k] != 0.0) total += alpha[k] * rt_moment(m, rt.basis[static_cast<std::size_t>(k)]);
  EXPECT_LT((total - p).norm(), 1e-12 * p.norm());
}

// ---- Lead fields ---------------------------------------------------------------

TEST(LeadField, ElectricColumnsSumToZero) {
  for (int layers : {1, 2}) {
    const HeadMesh m = small_mesh(3, layers);
    const Matrix Me = electric_lead_field(assemble_system(m));
    EXPECT_LT(Me.colwise().sum().cwiseAbs().maxCoeff(), 1e-10 * Me.cwiseAbs().maxCoeff());
  }
  const HeadMesh head = make_sphere_mesh(four_layer_head_options(6));
  const Matrix Me = electric_lead_field(assemble_system(head));
  EXPECT_EQ(Me.rows(), 31);
  EXPECT_LT(Me.colwise().sum().cwiseAbs().maxCoeff(), 1e-10 * Me.cwiseAbs().maxCoeff());
}

TEST(LeadField, TinyMeshMatchesBlockSystem) {
  HeadMesh m = small_mesh(1);
  // Perturb conductivities per tet so no symmetry hides an error.
  m.domains[1] = {"other", 0.05};
  for (std::size_t t = 0; t < m.tets.size(); t += 3) m.tet_domain[t] = 1;
  m.finalize();
  ASSERT_LE(m.num_tets(), 200);
  const FemSystem sys = assemble_system(m);
  ASSERT_GT(sys.num_sources(), 0);
  const FemSolver solver(sys);
  const MagneticParts parts = magnetic_parts(sys, m);
  const Matrix I = Matrix::Identity(sys.num_sources(), sys.num_sources());
  const BlockOracle o = block_oracle(sys, parts, I);
  EXPECT_LT(rel_max(solver.electric_lead_field(), o.electric), 1e-10);
  EXPECT_LT(rel_max(magnetic_lead_field(solver, m, parts), o.magnetic), 1e-10);
}

TEST(LeadField, ForwardSolveAgreesWithLeadFields) {
  const HeadMesh m = small_mesh(2, 2);
  const FemSystem sys = assemble_system(m);
  const FemSolver solver(sys);
  const MagneticParts parts = magnetic_parts(sys, m);
  const Matrix Me = solver.electric_lead_field();
  const Matrix Mm = magnetic_lead_field(solver, m, parts);

  const auto zero = forward_solve(solver, parts, Vector::Zero(sys.num_sources()));
  EXPECT_EQ(zero.U.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(zero.field.cwiseAbs().maxCoeff(), 0.0);

  Vector unit = Vector::Zero(sys.num_sources());
  unit[5] = 1.0;
  const auto one = forward_solve(solver, parts, unit);
  EXPECT_LT((one.U - Me.col(5)).cwiseAbs().maxCoeff(), 1e-10 * Me.col(5).cwiseAbs().maxCoeff());

  std::mt19937_64 rng(3);
  const Vector alpha = oracle::random_vector(rng, static_cast<int>(sys.num_sources()));
  const auto fr = forward_solve(solver, parts, alpha);
  const Vector U = Me * alpha, Bf = Mm * alpha;
  EXPECT_LT((fr.U - U).cwiseAbs().maxCoeff(), 1e-10 * U.cwiseAbs().maxCoeff());
  EXPECT_LT((fr.field - Bf).cwiseAbs().maxCoeff(), 1e-10 * Bf.cwiseAbs().maxCoeff());
  EXPECT_LT(std::abs(fr.U.sum()), 1e-10 * fr.U.cwiseAbs().maxCoeff());
  const BlockOracle o = block_oracle(sys, parts, alpha);
  EXPECT_LT(rel_max(fr.U, o.electric), 1e-10);
  EXPECT_LT(rel_max(fr.zeta, o.zeta), 1e-10);
  EXPECT_THROW(forward_solve(solver, parts, Vector::Zero(3)), DimensionError);
}

TEST(LeadField, PointSymmetricSourceGivesAntisymmetricPairs) {
  // The mesh and the six electrodes are invariant under x -> -x; a dipole at the
  // center is odd under that map, so opposite electrodes read opposite values.
  const HeadMesh m = small_mesh(3, 2);
  const FemSystem sys = assemble_system(m);
  const Vector alpha = rt_dipole(m, sys.rt, Vec3::Zero(), Vec3(1e-6, 0.4e-6, -0.2e-6), 0.03, 3);
  const Vector U = electric_lead_field(sys) * alpha;
  const double scale = U.cwiseAbs().maxCoeff();
  ASSERT_GT(scale, 0.0);
  for (int pair = 0; pair < 3; ++pair) {
    EXPECT_NEAR(U[2 * pair] + U[2 * pair + 1], 0.0, 1e-9 * scale);
    EXPECT_GT(std::abs(U[2 * pair]), 1e-3 * scale);
  }
}

TEST(LeadField, HomogeneousSphereMatchesAnalyticPotential) {
  // Closed-form kernel agrees with its Legendre series.
  const double R = 0.09;
  for (const Vec3& r0 : {Vec3(0.0, 0.02, 0.04), Vec3(0.03, -0.01, 0.0)}) {
    const Vec3 r = Vec3(0.3, -0.5, 0.8).normalized() * R;
    EXPECT_NEAR(oracle::sphere_kernel(r, r0, R), oracle::sphere_kernel_series(r, r0, R), 1e-10 / R);
  }
  // Centered dipole: three times the infinite-medium surface value.
  const Vec3 p(0.0, 0.0, 1e-6), r(0.0, 0.0, R);
  EXPECT_NEAR(oracle::sphere_dipole_potential(r, Vec3::Zero(), p, R, 0.33), 3.0 * 1e-6 / (4 * M_PI * 0.33 * R * R), 1e-6 * 1e-6 / (R * R));

  SphereOptions o;
  o.resolution = 10;
  o.sensors = 0;
  const HeadMesh m = make_sphere_mesh(o);
  ASSERT_LE(m.num_tets(), 50000);
  const FemSystem sys = assemble_system(m);
  const Vec3 r0(0.0, 0.02, 0.04), q(1e-6, 0.0, 0.0);  // tangential: q . r0 = 0
  const Vector U = electric_lead_field(sys) * rt_dipole(m, sys.rt, r0, q, 0.016);
  Vector ref(m.num_electrodes());
  for (Index l = 0; l < ref.size(); ++l) {
    double area = 0.0, v = 0.0;
    for (const auto& tri : m.electrodes[static_cast<std::size_t>(l)].triangles) {
      const Vec3 a = m.nodes[static_cast<std::size_t>(tri[0])], b = m.nodes[static_cast<std::size_t>(tri[1])],
                 c = m.nodes[static_cast<std::size_t>(tri[2])];
      const double ar = triangle_area(a, b, c);
      v += ar * oracle::sphere_dipole_potential(((a + b + c) / 3.0).normalized() * R, r0, q, R, 0.33);
      area += ar;
    }
    ref[l] = v / area;
  }
  ref.array() -= ref.mean();
  const double err = (U.array() - U.mean()).matrix().norm() > 0 ? (U.array() - U.mean() - ref.array()).matrix().norm() / ref.norm() : 1.0;
  EXPECT_LT(err, 0.10);
}

TEST(LeadField, RefinementChangesPotentialsLittle) {
  const Vec3 r0(0.0, 0.01, 0.02), q(1e-6, 0.0, 0.0);
  std::vector<Vector> U;
  for (int n : {5, 10}) {
    SphereOptions o;
    o.resolution = n;
    o.sensors = 0;
    const HeadMesh m = make_sphere_mesh(o);
    const FemSystem sys = assemble_system(m);
    U.push_back(electric_lead_field(sys) * rt_dipole(m, sys.rt, r0, q, 0.016));
  }
  EXPECT_LT((U[1] - U[0]).norm() / U[1].norm(), 0.05);
}

TEST(LeadField, PrimaryFieldMatchesDenseQuadrature) {
  auto doc = two_tet_doc();
  for (auto& p : doc["nodes"])
    for (auto& c : p) c = c.get<double>() * 0.01;
  const HeadMesh m0 = load_mesh(doc);
  const RtSourceSpace rt = make_rt_space(m0);
  ASSERT_EQ(rt.size(), 1);
  const auto& b = rt.basis[0];
  const double diam = 0.01 * std::sqrt(3.0);
  for (double dist : {5.0, 8.0, 20.0}) {
    HeadMesh m = m0;
    const Vec3 dir = Vec3(0.2, -0.7, 0.6).normalized();
    m.sensors = {{Vec3(0.005, 0.005, 0.005) + dist * diam * dir, Vec3(0.3, 0.4, -0.5).normalized()}};
    const Matrix W = primary_field_matrix(m, rt);
    const auto& s = m.sensors[0];
    double ref = 0.0;
    for (int side : {1, -1}) {
      const Index t = side > 0 ? b.tet_plus : b.tet_minus;
      ref += oracle::tet_integral(m.vertex(t, 0), m.vertex(t, 1), m.vertex(t, 2), m.vertex(t, 3), [&](const Eigen::Vector3d& x) {
        const Vec3 d = s.position - x;
        return s.orientation.dot(rt_value(m, b, side, x).cross(d)) / std::pow(d.norm(), 3);
      });
    }
    ref *= 1e-7;
    EXPECT_LT(std::abs(W(0, 0) - ref) / std::abs(ref), 1e-3) << "distance " << dist;
  }
}

TEST(LeadField, PrimaryFieldDecaysInverseSquare) {
  const HeadMesh base = make_sphere_mesh([] {
    SphereOptions o;
    o.resolution = 2;
    o.sensors = 0;
    return o;
  }());
  const RtSourceSpace rt = make_rt_space(base);
  const Index k = rt.size() / 2;
  const Vec3 c = rt_center(base, rt.basis[static_cast<std::size_t>(k)]);
  const Vec3 mom = rt_moment(base, rt.basis[static_cast<std::size_t>(k)]);
  // Direction perpendicular to the moment, orientation perpendicular to both.
  const Vec3 dir = mom.unitOrthogonal();
  const Vec3 e = mom.cross(dir).normalized();
  double w[2];
  for (int i = 0; i < 2; ++i) {
    HeadMesh m = base;
    m.sensors = {{c + (i == 0 ? 2.0 : 4.0) * dir, e}};
    w[i] = primary_field_matrix(m, rt)(0, k);
  }
  EXPECT_NEAR(std::log2(w[0] / w[1]), 2.0, 0.1);
}

TEST(LeadField, RadialSensorsSeeOnlyPrimaryField) {
  SphereOptions o;
  o.resolution = 6;
  o.sensors = 24;
  const HeadMesh m = make_sphere_mesh(o);
  const FemSystem sys = assemble_system(m);
  const FemSolver solver(sys);
  const MagneticParts parts = magnetic_parts(sys, m);
  const Matrix Mm = magnetic_lead_field(solver, m, parts);
  EXPECT_LT((Mm - parts.W).norm() / parts.W.norm(), 0.10);
  // The volume-current part is not negligible for tangential sensors.
  HeadMesh tang = m;
  for (auto& s : tang.sensors) s.orientation = s.position.unitOrthogonal();
  const MagneticParts tp = magnetic_parts(sys, tang);
  EXPECT_GT((magnetic_lead_field(solver, tang, tp) - tp.W).norm() / tp.W.norm(), 0.10);
}

TEST(LeadField, SensorInsideMeshIsRejected) {
  SphereOptions o;
  o.resolution = 2;
  o.sensors = 0;
  HeadMesh m = make_sphere_mesh(o);
  m.sensors = {{Vec3(0.0, 0.0, 0.01), Vec3::UnitZ()}};
  const FemSystem sys = assemble_system(m);
  EXPECT_THROW(magnetic_lead_field(sys, m), DomainError);
}

TEST(LeadField, NoElectrodesIsAnError) {
  SphereOptions o;
  o.resolution = 2;
  o.electrodes = 0;
  const HeadMesh m = make_sphere_mesh(o);
  EXPECT_THROW(electric_lead_field(assemble_system(m)), DomainError);
}

TEST(LeadField, BinaryExportRoundTrip) {
  const HeadMesh m = small_mesh(1);
  const Matrix Me = electric_lead_field(assemble_system(m));
  const auto path = std::filesystem::temp_directory_path() / "hbloc_fem_test" / "me.bin";
  write_lead_field(path, Me, "electric", "V/(A m)", "electrode");
  const auto back = read_matrix_binary(path);
  EXPECT_EQ(back.data, Me);
  EXPECT_EQ(back.header["kind"], "electric");
  EXPECT_EQ(back.header["row_ids"].size(), static_cast<std::size_t>(Me.rows()));
  std::filesystem::remove_all(path.parent_path());
}
