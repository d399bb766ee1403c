#include <gtest/gtest.h>

#include <random>

#include <Eigen/Cholesky>

#include "vsms/fem.hpp"

using namespace vsms;

TEST(Element, RowSumsAndMassTotal) {
  const auto e = bilinear_element(0.3, 0.2);
  for (int a = 0; a < 4; ++a) EXPECT_NEAR(e.stiffness.row(a).sum(), 0.0, 1e-14);
  EXPECT_NEAR(e.mass.sum(), 0.3 * 0.2, 1e-15);
  EXPECT_NEAR((e.stiffness - e.stiffness.transpose()).norm(), 0.0, 1e-15);
}

TEST(Element, SquareStiffnessMatchesClosedForm) {
  // Q1 on a square: diagonal 2/3, edge neighbours -1/6, opposite corner -1/3.
  const auto e = bilinear_element(0.5, 0.5);
  EXPECT_NEAR(e.stiffness(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(e.stiffness(0, 1), -1.0 / 6.0, 1e-15);
  EXPECT_NEAR(e.stiffness(0, 2), -1.0 / 6.0, 1e-15);
  EXPECT_NEAR(e.stiffness(0, 3), -1.0 / 3.0, 1e-15);
}

TEST(AffineOperator, CombineMatchesDirectAssembly) {
  const auto mesh = build_fine_mesh(6, 5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  Eigen::VectorXd kappa(mesh.num_cells());
  for (auto& v : kappa) v = u(rng);
  const AffineOperator op(mesh);
  const SparseMatrix a = op.combine(kappa);
  const SparseMatrix b = assemble_stiffness(mesh, kappa);
  EXPECT_LT(Eigen::MatrixXd(a - b).cwiseAbs().maxCoeff(), 1e-13);
  SparseMatrix sum(mesh.num_nodes(), mesh.num_nodes());
  for (int p = 0; p < op.num_pieces(); ++p) sum += kappa[p] * op.piece(p);
  EXPECT_LT(Eigen::MatrixXd(a - sum).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(AffineOperator, PieceFormMatchesMatrix) {
  const auto mesh = build_fine_mesh(3, 3);
  const AffineOperator op(mesh);
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(mesh.num_nodes(), -1.0, 2.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(mesh.num_nodes(), 0.5, -0.7);
  for (int p = 0; p < op.num_pieces(); ++p) EXPECT_NEAR(op.piece_form(p, w, v), v.dot(op.piece(p) * w), 1e-14);
}

TEST(Mass, RejectsNonPositiveWeights) {
  const auto mesh = build_fine_mesh(3, 3);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(mesh.num_cells());
  w[4] = 0.0;
  try {
    assemble_mass(mesh, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_coefficient);
  }
}

TEST(ReducedPattern, GatherEqualsDenseSubmatrix) {
  const auto mesh = build_fine_mesh(4, 4);
  const AffineOperator op(mesh);
  const DofMap dofs = DofMap::interior(mesh);
  const ReducedPattern rp(op.pattern(), dofs);
  const SparseMatrix full = op.combine(Eigen::VectorXd::LinSpaced(mesh.num_cells(), 1.0, 2.0));
  const Eigen::MatrixXd dense(full);
  const Eigen::MatrixXd red(rp.gather(full));
  for (int i = 0; i < dofs.num_dofs(); ++i)
    for (int j = 0; j < dofs.num_dofs(); ++j) EXPECT_EQ(red(i, j), dense(dofs.node(i), dofs.node(j)));
}

TEST(Plume, HasUnitMassOverThePlane) {
  // Midpoint rule on a wide box; the plume at std 0.1 is negligible beyond 1.
  const GaussianPlume f;
  double sum = 0.0;
  const int n = 400;
  const double h = 2.0 / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sum += f(Point(-0.45 + (i + 0.5) * h, -0.6 + (j + 0.5) * h)) * h * h;
  EXPECT_NEAR(sum, 1.0, 1e-6);
}

TEST(ParabolicProblem, EndTimeMustBeMultipleOfStep) {
  ParabolicProblem p;
  p.dt = 0.003;
  p.end_time = 0.2;
  EXPECT_THROW(p.num_steps(), Error);
  p.dt = 0.002;
  EXPECT_EQ(p.num_steps(), 100);
}

TEST(FineSolver, NoFlowConservesMassExactly) {
  // A 1 = 0 for no-flow, so 1^T M u^{n+1} = 1^T M u^n + dt 1^T M f each step.
  const auto mesh = build_fine_mesh(12, 12);
  ParabolicProblem p;
  p.source = nodal_values(mesh, GaussianPlume{});
  p.dt = 0.01;
  p.end_time = 0.1;
  Eigen::VectorXd xi = Eigen::VectorXd::LinSpaced(mesh.num_cells(), -0.5, 0.5);
  const FineSolver solver(mesh, false);
  const Trajectory t = solver.solve(xi, p);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(mesh.num_nodes());
  const double rate = ones.dot(solver.mass() * p.source);
  for (int n = 0; n <= t.num_steps(); ++n)
    EXPECT_NEAR(ones.dot(solver.mass() * t.states[static_cast<std::size_t>(n)]), n * p.dt * rate, 1e-11);
}

TEST(FineSolver, AffineDataIsASteadyStateForConstantCoefficient) {
  // Without source, g affine is discrete-harmonic for constant kappa; once
  // boundary values are switched on the interior relaxes to g.
  const auto mesh = build_fine_mesh(8, 8);
  ParabolicProblem p;
  p.source = Eigen::VectorXd::Zero(mesh.num_nodes());
  p.dirichlet = AffineBoundary{1.7, -1.4, 0.3};
  p.dt = 0.05;
  p.end_time = 5.0;
  const Trajectory t = solve_parabolic_fine(mesh, Eigen::VectorXd::Zero(mesh.num_cells()), p);
  const Eigen::VectorXd g = nodal_values(mesh, *p.dirichlet);
  EXPECT_LT((t.states.back() - g).cwiseAbs().maxCoeff(), 1e-10);
  for (int n : mesh.boundary_nodes()) EXPECT_EQ(t.states[1][n], g[n]);
  EXPECT_EQ(t.states[0].norm(), 0.0);
}

TEST(FineSolver, MatchesDenseBackwardEulerReference) {
  // Independent dense implementation of the same scheme on a small grid.
  const auto mesh = build_fine_mesh(4, 3);
  ParabolicProblem p;
  p.source = nodal_values(mesh, GaussianPlume{});
  p.dirichlet = AffineBoundary{2.0, -2.0, 0.0};
  p.dt = 0.01;
  p.end_time = 0.05;
  const Eigen::VectorXd xi = Eigen::VectorXd::LinSpaced(mesh.num_cells(), -0.3, 0.6);
  const Trajectory t = solve_parabolic_fine(mesh, xi, p);

  const Eigen::MatrixXd a(assemble_stiffness(mesh, xi.array().exp().matrix()));
  const Eigen::MatrixXd m(assemble_mass(mesh));
  const auto& in = mesh.interior_nodes();
  const auto& bd = mesh.boundary_nodes();
  const int ni = static_cast<int>(in.size());
  Eigen::MatrixXd lhs(ni, ni);
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < ni; ++j) lhs(i, j) = m(in[i], in[j]) + p.dt * a(in[i], in[j]);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(mesh.num_nodes());
  for (int step = 1; step <= p.num_steps(); ++step) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(mesh.num_nodes());
    for (int b : bd) next[b] = (*p.dirichlet)(mesh.node_coord(b));
    Eigen::VectorXd rhs(ni);
    const Eigen::VectorXd full = m * u + p.dt * m * p.source - (m + p.dt * a) * next;
    for (int i = 0; i < ni; ++i) rhs[i] = full[in[i]];
    const Eigen::VectorXd x = lhs.ldlt().solve(rhs);
    for (int i = 0; i < ni; ++i) next[in[i]] = x[i];
    u = next;
    EXPECT_LT((u - t.states[static_cast<std::size_t>(step)]).cwiseAbs().maxCoeff(), 1e-12);
  }
}
