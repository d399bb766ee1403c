#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "vsms/error.hpp"
#include "vsms/mesh.hpp"

namespace vsms {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Unit-coefficient bilinear element matrices on an hx-by-hy rectangle,
/// local node order (0,0), (1,0), (0,1), (1,1).
struct ElementMatrices {
  Eigen::Matrix4d stiffness;
  Eigen::Matrix4d mass;
};

inline ElementMatrices bilinear_element(double hx, double hy) {
  // Tensor products of the 1D linear element: K = Sx (x) My + Mx (x) Sy.
  const Eigen::Matrix2d s1{{1.0, -1.0}, {-1.0, 1.0}};
  const Eigen::Matrix2d m1{{2.0 / 6.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 6.0}};
  ElementMatrices e;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      const int ax = a % 2, ay = a / 2, bx = b % 2, by = b / 2;
      e.stiffness(a, b) = s1(ax, bx) / hx * m1(ay, by) * hy + m1(ax, bx) * hx * s1(ay, by) / hy;
      e.mass(a, b) = m1(ax, bx) * hx * m1(ay, by) * hy;
    }
  }
  return e;
}

/// a(w, v; xi) = sum_p kappa_p a_p(w, v) with one piece a_p per cell.
///
/// The pieces share the sparsity pattern of the full stiffness matrix; each
/// cell keeps the 16 slots it scatters into, so forming sum_p kappa_p a_p is
/// a single pass over the cells without any sparse-structure work.
class AffineOperator {
 public:
  AffineOperator() = default;

  explicit AffineOperator(const FineMesh& mesh)
      : mesh_(mesh), element_(bilinear_element(mesh.hx(), mesh.hy()).stiffness) {
    const int n = mesh.num_nodes();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(mesh.num_cells()) * 16);
    for (int c = 0; c < mesh.num_cells(); ++c) {
      const auto nodes = mesh.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) trip.emplace_back(nodes[a], nodes[b], 1.0);
    }
    pattern_.resize(n, n);
    pattern_.setFromTriplets(trip.begin(), trip.end());
    pattern_.makeCompressed();
    slots_.resize(static_cast<std::size_t>(mesh.num_cells()) * 16);
    for (int c = 0; c < mesh.num_cells(); ++c) {
      const auto nodes = mesh.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) slots_[static_cast<std::size_t>(c) * 16 + a * 4 + b] = slot_of(nodes[a], nodes[b]);
    }
  }

  const FineMesh& mesh() const noexcept { return mesh_; }
  int num_pieces() const noexcept { return mesh_.num_cells(); }
  const Eigen::Matrix4d& element() const noexcept { return element_; }
  /// Sparsity pattern shared by every combination of the pieces.
  const SparseMatrix& pattern() const noexcept { return pattern_; }

  /// The p-th piece as an explicit sparse matrix over all mesh nodes.
  SparseMatrix piece(int p) const {
    std::vector<Eigen::Triplet<double>> trip;
    const auto nodes = mesh_.cell_nodes(p);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) trip.emplace_back(nodes[a], nodes[b], element_(a, b));
    SparseMatrix m(mesh_.num_nodes(), mesh_.num_nodes());
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

  /// Writes sum_p kappa_p a_p into `out`, which must carry pattern().
  void combine_into(const Eigen::VectorXd& kappa, SparseMatrix& out) const {
    if (kappa.size() != num_pieces()) throw Error(ErrorKind::invalid_dimension, "coefficient length != number of pieces");
    double* values = out.valuePtr();
    std::fill(values, values + out.nonZeros(), 0.0);
    const double* ke = element_.data();
    for (int c = 0; c < num_pieces(); ++c) {
      const double k = kappa[c];
      const int* slot = &slots_[static_cast<std::size_t>(c) * 16];
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) values[slot[a * 4 + b]] += k * ke[b * 4 + a];
    }
  }

  SparseMatrix combine(const Eigen::VectorXd& kappa) const {
    SparseMatrix out = pattern_;
    combine_into(kappa, out);
    return out;
  }

  /// a_p(w, v) for nodal fields w, v.
  double piece_form(int p, const Eigen::VectorXd& w, const Eigen::VectorXd& v) const {
    const auto nodes = mesh_.cell_nodes(p);
    Eigen::Vector4d wl, vl;
    for (int a = 0; a < 4; ++a) {
      wl[a] = w[nodes[a]];
      vl[a] = v[nodes[a]];
    }
    return vl.dot(element_ * wl);
  }

 private:
  int slot_of(int row, int col) const {
    const int* inner = pattern_.innerIndexPtr();
    const int begin = pattern_.outerIndexPtr()[col];
    const int end = pattern_.outerIndexPtr()[col + 1];
    const int* it = std::lower_bound(inner + begin, inner + end, row);
    return static_cast<int>(it - inner);
  }

  FineMesh mesh_;
  Eigen::Matrix4d element_ = Eigen::Matrix4d::Zero();
  SparseMatrix pattern_;
  std::vector<int> slots_;
};

inline AffineOperator assemble_affine_stiffness(const FineMesh& mesh) { return AffineOperator(mesh); }

/// Stiffness matrix with a cellwise-constant coefficient, assembled directly
/// from element contributions (independent of AffineOperator's slot cache).
inline SparseMatrix assemble_stiffness(const FineMesh& mesh, const Eigen::VectorXd& cell_coefficient) {
  if (cell_coefficient.size() != mesh.num_cells())
    throw Error(ErrorKind::invalid_dimension, "coefficient length != number of cells");
  const Eigen::Matrix4d ke = bilinear_element(mesh.hx(), mesh.hy()).stiffness;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.num_cells()) * 16);
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const auto nodes = mesh.cell_nodes(c);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) trip.emplace_back(nodes[a], nodes[b], cell_coefficient[c] * ke(a, b));
  }
  SparseMatrix m(mesh.num_nodes(), mesh.num_nodes());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

/// Consistent mass matrix with strictly positive cellwise weights.
inline SparseMatrix assemble_mass(const FineMesh& mesh, const Eigen::VectorXd& cell_weights) {
  if (cell_weights.size() != mesh.num_cells())
    throw Error(ErrorKind::invalid_dimension, "weight length != number of cells");
  if (!(cell_weights.array() > 0.0).all()) throw Error(ErrorKind::invalid_coefficient, "mass weights must be positive");
  const Eigen::Matrix4d me = bilinear_element(mesh.hx(), mesh.hy()).mass;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.num_cells()) * 16);
  for (int c = 0; c < mesh.num_cells(); ++c) {
    const auto nodes = mesh.cell_nodes(c);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) trip.emplace_back(nodes[a], nodes[b], cell_weights[c] * me(a, b));
  }
  SparseMatrix m(mesh.num_nodes(), mesh.num_nodes());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

inline SparseMatrix assemble_mass(const FineMesh& mesh) {
  return assemble_mass(mesh, Eigen::VectorXd::Ones(mesh.num_cells()));
}

/// Numbering of the unconstrained nodes, increasing with node index.
class DofMap {
 public:
  DofMap() = default;
  DofMap(int num_nodes, const std::vector<char>& constrained) : dof_of_node_(num_nodes, -1) {
    for (int n = 0; n < num_nodes; ++n) {
      if (!constrained[n]) {
        dof_of_node_[n] = static_cast<int>(node_of_dof_.size());
        node_of_dof_.push_back(n);
      }
    }
  }
  static DofMap interior(const FineMesh& mesh) {
    std::vector<char> c(mesh.num_nodes(), 0);
    for (int n : mesh.boundary_nodes()) c[n] = 1;
    return DofMap(mesh.num_nodes(), c);
  }
  static DofMap all(const FineMesh& mesh) { return DofMap(mesh.num_nodes(), std::vector<char>(mesh.num_nodes(), 0)); }

  int num_dofs() const noexcept { return static_cast<int>(node_of_dof_.size()); }
  int num_nodes() const noexcept { return static_cast<int>(dof_of_node_.size()); }
  int dof(int node) const noexcept { return dof_of_node_[node]; }
  int node(int dof) const noexcept { return node_of_dof_[dof]; }

  Eigen::VectorXd restrict(const Eigen::VectorXd& full) const {
    Eigen::VectorXd r(num_dofs());
    for (int d = 0; d < num_dofs(); ++d) r[d] = full[node_of_dof_[d]];
    return r;
  }
  /// Writes dof values into a full nodal vector, leaving constrained nodes untouched.
  void scatter(const Eigen::VectorXd& reduced, Eigen::VectorXd& full) const {
    for (int d = 0; d < num_dofs(); ++d) full[node_of_dof_[d]] = reduced[d];
  }

 private:
  std::vector<int> dof_of_node_;
  std::vector<int> node_of_dof_;
};

/// Free-free block of a matrix with a fixed sparsity pattern, extracted by a
/// precomputed gather so repeated re-assembly does no structural work.
class ReducedPattern {
 public:
  ReducedPattern() = default;
  ReducedPattern(const SparseMatrix& full_pattern, const DofMap& dofs) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int col = 0; col < full_pattern.outerSize(); ++col) {
      const int dc = dofs.dof(col);
      if (dc < 0) continue;
      for (SparseMatrix::InnerIterator it(full_pattern, col); it; ++it) {
        const int dr = dofs.dof(static_cast<int>(it.row()));
        if (dr >= 0) trip.emplace_back(dr, dc, 1.0);
      }
    }
    reduced_.resize(dofs.num_dofs(), dofs.num_dofs());
    reduced_.setFromTriplets(trip.begin(), trip.end());
    reduced_.makeCompressed();
    gather_.reserve(static_cast<std::size_t>(reduced_.nonZeros()));
    for (int col = 0; col < full_pattern.outerSize(); ++col) {
      if (dofs.dof(col) < 0) continue;
      const int begin = full_pattern.outerIndexPtr()[col];
      const int end = full_pattern.outerIndexPtr()[col + 1];
      for (int k = begin; k < end; ++k)
        if (dofs.dof(full_pattern.innerIndexPtr()[k]) >= 0) gather_.push_back(k);
    }
  }

  const SparseMatrix& pattern() const noexcept { return reduced_; }

  void gather(const SparseMatrix& full, SparseMatrix& reduced) const {
    double* out = reduced.valuePtr();
    const double* in = full.valuePtr();
    for (std::size_t k = 0; k < gather_.size(); ++k) out[k] = in[gather_[k]];
  }

  SparseMatrix gather(const SparseMatrix& full) const {
    SparseMatrix r = reduced_;
    gather(full, r);
    return r;
  }

 private:
  SparseMatrix reduced_;
  std::vector<int> gather_;
};

/// g(x) = c0 + c1 x1 + c2 x2, time independent.
struct AffineBoundary {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double operator()(const Point& x) const noexcept { return c0 + c1 * x.x() + c2 * x.y(); }
};

/// Gaussian plume normalised to total mass `weight` over the plane.
struct GaussianPlume {
  Point center = Point(0.55, 0.4);
  double std_dev = 0.1;
  double weight = 1.0;
  double operator()(const Point& x) const noexcept {
    const double s2 = std_dev * std_dev;
    return weight / (2.0 * std::numbers::pi * s2) * std::exp(-(x - center).squaredNorm() / (2.0 * s2));
  }
};

inline Eigen::VectorXd nodal_values(const FineMesh& mesh, const auto& fn) {
  Eigen::VectorXd v(mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n) v[n] = fn(mesh.node_coord(n));
  return v;
}

/// c du/dt - div(kappa grad u) = f on the unit square, u(., 0) = 0, with
/// either Dirichlet data g on the whole boundary or no-flow everywhere.
struct ParabolicProblem {
  Eigen::VectorXd source;                  // nodal f, constant in time
  std::optional<AffineBoundary> dirichlet; // nullopt: no-flow
  double storage = 1.0;
  double dt = 1e-3;
  double end_time = 0.2;

  int num_steps() const {
    if (!(dt > 0.0)) throw Error(ErrorKind::invalid_dimension, "time step must be positive");
    const double ratio = end_time / dt;
    const long n = std::lround(ratio);
    if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-8 * std::max(1.0, ratio))
      throw Error(ErrorKind::invalid_dimension, "end time must be a positive multiple of the time step");
    return static_cast<int>(n);
  }

  void validate(const FineMesh& mesh) const {
    num_steps();
    if (source.size() != mesh.num_nodes()) throw Error(ErrorKind::invalid_dimension, "source length != nodes");
    if (!source.allFinite()) throw Error(ErrorKind::invalid_coefficient, "source must be finite");
    if (!(storage > 0.0)) throw Error(ErrorKind::invalid_coefficient, "storage coefficient must be positive");
  }
};

/// Nodal states u^0..u^n at t = n * dt.
struct Trajectory {
  double dt = 0.0;
  std::vector<Eigen::VectorXd> states;

  int num_steps() const noexcept { return static_cast<int>(states.size()) - 1; }
};

/// Reference backward-Euler solver on the fine grid:
///   (cM + dt A(xi)) u^{n+1} = cM u^n + dt M f,   A(xi) = sum_p exp(xi_p) a_p,
/// Dirichlet rows and columns eliminated with the data moved to the right
/// hand side. The matrix is factored once per xi.
class FineSolver {
 public:
  FineSolver(const FineMesh& mesh, bool dirichlet)
      : mesh_(mesh), op_(mesh), mass_(assemble_mass(mesh)), dirichlet_(dirichlet) {
    dofs_ = dirichlet ? DofMap::interior(mesh) : DofMap::all(mesh);
    reduced_ = ReducedPattern(op_.pattern(), dofs_);
    // Mass and stiffness share one pattern (both are the Q1 stencil).
    mass_in_pattern_ = op_.pattern();
    for (int col = 0; col < mass_.outerSize(); ++col)
      for (SparseMatrix::InnerIterator it(mass_, col); it; ++it) mass_in_pattern_.coeffRef(it.row(), col) = it.value();
  }

  const FineMesh& mesh() const noexcept { return mesh_; }
  const AffineOperator& op() const noexcept { return op_; }
  const SparseMatrix& mass() const noexcept { return mass_; }

  /// Runs `steps` steps (default: all of prob).
  Trajectory solve(const Eigen::VectorXd& xi, const ParabolicProblem& prob, int steps = -1) const {
    prob.validate(mesh_);
    if (xi.size() != op_.num_pieces()) throw Error(ErrorKind::invalid_dimension, "xi length != number of cells");
    if (prob.dirichlet.has_value() != dirichlet_)
      throw Error(ErrorKind::invalid_dimension, "solver constraint set does not match the problem");
    const int n_steps = steps < 0 ? prob.num_steps() : steps;

    SparseMatrix system = op_.combine(xi.array().exp().matrix());
    system *= prob.dt;
    system += prob.storage * mass_in_pattern_;

    SparseMatrix reduced = reduced_.gather(system);
    Eigen::SimplicialLLT<SparseMatrix> factor(reduced);
    if (factor.info() != Eigen::Success) throw SolverError("fine system factorization failed", 0);

    Eigen::VectorXd boundary = Eigen::VectorXd::Zero(mesh_.num_nodes());
    if (prob.dirichlet)
      for (int n : mesh_.boundary_nodes()) boundary[n] = (*prob.dirichlet)(mesh_.node_coord(n));
    const Eigen::VectorXd load = prob.dt * (mass_ * prob.source);
    const Eigen::VectorXd lift_rhs = system * boundary;

    Trajectory traj;
    traj.dt = prob.dt;
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.states.push_back(Eigen::VectorXd::Zero(mesh_.num_nodes()));
    for (int step = 1; step <= n_steps; ++step) {
      const Eigen::VectorXd rhs_full = prob.storage * (mass_ * traj.states.back()) + load - lift_rhs;
      const Eigen::VectorXd u = factor.solve(dofs_.restrict(rhs_full));
      if (factor.info() != Eigen::Success || !u.allFinite()) throw SolverError("fine solve failed", step);
      Eigen::VectorXd next = boundary;
      dofs_.scatter(u, next);
      traj.states.push_back(std::move(next));
    }
    return traj;
  }

 private:
  FineMesh mesh_;
  AffineOperator op_;
  SparseMatrix mass_;
  SparseMatrix mass_in_pattern_;
  bool dirichlet_;
  DofMap dofs_;
  ReducedPattern reduced_;
};

inline Trajectory solve_parabolic_fine(const FineMesh& mesh, const Eigen::VectorXd& xi, const ParabolicProblem& prob) {
  return FineSolver(mesh, prob.dirichlet.has_value()).solve(xi, prob);
}

}  // namespace vsms
