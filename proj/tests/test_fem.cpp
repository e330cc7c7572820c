#include "bayesdic/fem.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace bayesdic;

namespace {

Microstructure two_disks() {
  Microstructure m;
  m.domain = Rect{0, 0, 4, 4};
  m.inclusions = {{Vec2{1.3, 1.4}, 1.0}, {Vec2{2.7, 2.6}, 1.0}};
  return m;
}

std::shared_ptr<const Mesh> small_mesh(double h = 0.25) {
  return std::make_shared<const Mesh>(generate_mesh(two_disks(), h));
}

std::vector<Vec2> affine_boundary(const Mesh& m, const Mat2& F) {
  std::vector<Vec2> v;
  for (int n : m.boundary_nodes) v.push_back((F - Mat2::Identity()) * m.nodes[n]);
  return v;
}

}  // namespace

TEST(Tri6, PartitionOfUnityAndNodalInterpolation) {
  const Vec2 ref[6] = {{0, 0}, {1, 0}, {0, 1}, {0.5, 0}, {0.5, 0.5}, {0, 0.5}};
  for (int a = 0; a < 6; ++a) {
    const auto N = tri6::shape(ref[a].x(), ref[a].y());
    for (int b = 0; b < 6; ++b) EXPECT_NEAR(N[b], a == b ? 1.0 : 0.0, 1e-15);
  }
  const auto N = tri6::shape(0.2, 0.3);
  double s = 0.0;
  for (double v : N) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  Vec2 g = Vec2::Zero();
  for (const auto& d : tri6::shape_gradients(0.2, 0.3)) g += d;
  EXPECT_NEAR(g.norm(), 0.0, 1e-15);
}

TEST(Tri6, GaussRuleIntegratesQuadratics) {
  // int over the reference triangle of xi^2 = 1/12, xi * eta = 1/24.
  double a = 0.0, b = 0.0;
  for (const auto& gp : tri6::kGauss) {
    a += gp.weight * gp.xi * gp.xi;
    b += gp.weight * gp.xi * gp.eta;
  }
  EXPECT_NEAR(a, 1.0 / 12.0, 1e-15);
  EXPECT_NEAR(b, 1.0 / 24.0, 1e-15);
}

TEST(Solver, HomogeneousPatchTestBothLoadCases) {
  const auto mesh = small_mesh();
  MaterialParams homog;
  homog.values = {1.0, 3.0, 1.0, 3.0};
  for (LoadCase t : {LoadCase::tension, LoadCase::shear}) {
    const Mat2 F = macro_gradient(t);
    const auto u = solve(mesh, homog, boundary_dirichlet(*mesh, affine_boundary(*mesh, F)));
    const auto exact = affine_field(mesh, F);
    double err = 0.0, ref = 0.0;
    for (std::size_t n = 0; n < mesh->node_count(); ++n) {
      err = std::max(err, (u[n] - exact[n]).norm());
      ref = std::max(ref, exact[n].norm());
    }
    EXPECT_LE(err / ref, 1e-8);
  }
}

TEST(Solver, ResidualVanishesAtEquilibrium) {
  const auto mesh = small_mesh();
  NonlinearSolver solver(mesh, mesh->boundary_nodes);
  const MaterialParams mat;
  const auto u = solver.solve(mat, affine_boundary(*mesh, macro_gradient(LoadCase::shear)), SolverOptions{});
  const Eigen::VectorXd R = solver.residual(mat, u);
  EXPECT_LT(R.norm(), 1e-8);
  // The affine field is not in equilibrium in the heterogeneous specimen.
  EXPECT_GT(solver.residual(mat, affine_field(mesh, macro_gradient(LoadCase::shear))).norm(), 1e-3);
}

TEST(Solver, NewtonConvergesQuadratically) {
  const auto mesh = small_mesh();
  SolveStats st;
  NonlinearSolver solver(mesh, mesh->boundary_nodes);
  SolverOptions o;
  o.n_increments = 1;
  o.newton_tol = 1e-13;
  solver.solve(MaterialParams{}, affine_boundary(*mesh, macro_gradient(LoadCase::tension)), o, nullptr, &st);
  ASSERT_EQ(st.residuals.size(), 1u);
  const auto& r = st.residuals[0];
  ASSERT_GE(r.size(), 4u);
  // Once in the asymptotic range, each step roughly squares the relative residual.
  for (std::size_t k = 2; k < r.size(); ++k)
    if (r[k - 1] / r[0] < 1e-3 && r[k] > 1e-13 * r[0]) EXPECT_LT(r[k] / r[0], 10.0 * std::pow(r[k - 1] / r[0], 1.8));
}

TEST(Solver, DirichletFieldIsInvariantUnderModulusScaling) {
  const auto mesh = small_mesh();
  NonlinearSolver solver(mesh, mesh->boundary_nodes);
  const auto bc = affine_boundary(*mesh, macro_gradient(LoadCase::shear));
  SolverOptions o;
  o.newton_tol = 1e-12;
  const MaterialParams base;
  const auto u0 = solver.solve(base, bc, o);
  for (double c : {0.5, 2.0}) {
    MaterialParams m = base;
    for (double& v : m.values) v *= c;
    const auto u = solver.solve(m, bc, o);
    double diff = 0.0, ref = 0.0;
    for (std::size_t n = 0; n < mesh->node_count(); ++n) {
      diff += (u[n] - u0[n]).squaredNorm();
      ref += u0[n].squaredNorm();
    }
    EXPECT_LT(std::sqrt(diff / ref), 1e-9) << "c = " << c;
  }
}

TEST(Solver, WarmStartMatchesColdSolve) {
  const auto mesh = small_mesh();
  NonlinearSolver solver(mesh, mesh->boundary_nodes);
  const auto bc = affine_boundary(*mesh, macro_gradient(LoadCase::tension));
  SolverOptions o;
  o.newton_tol = 1e-12;
  const auto cold = solver.solve(MaterialParams{}, bc, o);
  MaterialParams m;
  m.values[2] = 4.4;
  const auto other = solver.solve(m, bc, o);
  o.n_increments = 1;
  const auto warm = solver.solve(MaterialParams{}, bc, o, &other);
  for (std::size_t n = 0; n < mesh->node_count(); ++n) EXPECT_NEAR((warm[n] - cold[n]).norm(), 0.0, 1e-10);
}

TEST(Solver, DnsLoadsOnlyLeftAndRightEdges) {
  const auto mesh = small_mesh();
  const auto nodes = loaded_edge_nodes(*mesh);
  EXPECT_EQ(nodes.size(), 2u * 33u);
  const auto u = solve_dns(mesh, MaterialParams{}, LoadCase::tension);
  for (int n : nodes) EXPECT_NEAR(u[n].x(), 0.1 * mesh->nodes[n].x(), 1e-14);
  // Free top edge contracts laterally under tension.
  const FieldEvaluator ev(mesh);
  EXPECT_LT(ev(u, Vec2{2.0, 4.0}).y(), 0.0);
}

TEST(Solver, RejectsIncompleteDirichletData) {
  const auto mesh = small_mesh();
  DirichletData d = boundary_dirichlet(*mesh, affine_boundary(*mesh, Mat2::Identity()));
  d.nodes.pop_back();
  d.values.pop_back();
  EXPECT_THROW(solve(mesh, MaterialParams{}, d), InvalidDirichletData);
  EXPECT_THROW(boundary_dirichlet(*mesh, {}), InvalidDirichletData);
  EXPECT_THROW(NonlinearSolver(mesh, {0, 0}), InvalidDirichletData);
}

TEST(Solver, RejectsInvalidMaterial) {
  const auto mesh = small_mesh();
  MaterialParams m;
  m.values[0] = -1.0;
  EXPECT_THROW(solve(mesh, m, boundary_dirichlet(*mesh, affine_boundary(*mesh, Mat2::Identity()))), InvalidMaterial);
}

TEST(Field, EvaluationReproducesQuadraticFields) {
  // Quadratic elements interpolate quadratic fields exactly.
  const auto mesh = small_mesh(0.5);
  std::vector<Vec2> v;
  auto q = [](const Vec2& X) { return Vec2{X.x() * X.x() - 0.3 * X.x() * X.y(), 0.5 * X.y() * X.y() + X.x()}; };
  for (const auto& X : mesh->nodes) v.push_back(q(X));
  const DisplacementField u(mesh, v);
  for (const Vec2 X : {Vec2{0.33, 1.7}, Vec2{3.9, 0.01}, Vec2{2.0, 2.0}}) EXPECT_NEAR((evaluate_field(u, X) - q(X)).norm(), 0.0, 1e-12);
}

TEST(Field, TextRoundTripIsExact) {
  const auto mesh = small_mesh();
  const auto u = solve_dns(mesh, MaterialParams{}, LoadCase::shear);
  std::stringstream ss;
  write_displacement(ss, u);
  const auto r = read_displacement(ss, mesh);
  EXPECT_EQ(r.values(), u.values());
  std::stringstream bad("0 1 2\n");
  EXPECT_THROW(read_displacement(bad, mesh), MeshFormatError);
}
