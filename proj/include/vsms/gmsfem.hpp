#pragma once

#include <array>
#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include "vsms/error.hpp"
#include "vsms/fem.hpp"
#include "vsms/mesh.hpp"

namespace vsms {

/// Shape class of a coarse neighborhood: I corner (1 coarse element),
/// II horizontal edge (2x1), III vertical edge (1x2), IV interior (2x2).
enum class Template : int { corner = 0, horizontal_edge = 1, vertical_edge = 2, interior = 3 };

inline constexpr std::array<Template, 4> all_templates{Template::corner, Template::horizontal_edge,
                                                       Template::vertical_edge, Template::interior};

inline const char* template_name(Template t) {
  switch (t) {
    case Template::corner: return "I";
    case Template::horizontal_edge: return "II";
    case Template::vertical_edge: return "III";
    case Template::interior: return "IV";
  }
  return "?";
}

/// Support omega_i of coarse node i: the coarse elements sharing that node.
struct Neighborhood {
  int node_i = 0;
  int node_j = 0;
  Template kind = Template::interior;
  int cell_i0 = 0;  // first fine cell (x) of the patch
  int cell_j0 = 0;  // first fine cell (y) of the patch
  int cells_x = 0;
  int cells_y = 0;
  Point node_position = Point::Zero();
  bool on_domain_boundary = false;
};

class CoarseGrid {
 public:
  CoarseGrid() = default;

  CoarseGrid(const FineMesh& mesh, int hx_count, int hy_count)
      : fine_nx_(mesh.nx()), fine_ny_(mesh.ny()), fine_hx_(mesh.hx()), fine_hy_(mesh.hy()), hx_(hx_count), hy_(hy_count) {
    if (hx_count < 1 || hy_count < 1) throw Error(ErrorKind::invalid_dimension, "coarse grid needs cells");
    if (mesh.nx() % hx_count != 0 || mesh.ny() % hy_count != 0)
      throw Error(ErrorKind::nesting, "fine cells do not nest in coarse cells");
    bx_ = mesh.nx() / hx_count;
    by_ = mesh.ny() / hy_count;
    for (int j = 0; j <= hy_; ++j) {
      for (int i = 0; i <= hx_; ++i) {
        Neighborhood n;
        n.node_i = i;
        n.node_j = j;
        const int ex0 = std::max(i - 1, 0), ex1 = std::min(i, hx_ - 1);
        const int ey0 = std::max(j - 1, 0), ey1 = std::min(j, hy_ - 1);
        const int ncx = ex1 - ex0 + 1, ncy = ey1 - ey0 + 1;
        n.cell_i0 = ex0 * bx_;
        n.cell_j0 = ey0 * by_;
        n.cells_x = ncx * bx_;
        n.cells_y = ncy * by_;
        if (ncx == 2 && ncy == 2) n.kind = Template::interior;
        else if (ncx == 2) n.kind = Template::horizontal_edge;
        else if (ncy == 2) n.kind = Template::vertical_edge;
        else n.kind = Template::corner;
        n.node_position = Point(i * bx_ * fine_hx_, j * by_ * fine_hy_);
        n.on_domain_boundary = (i == 0 || j == 0 || i == hx_ || j == hy_);
        neighborhoods_.push_back(n);
      }
    }
  }

  int coarse_x() const noexcept { return hx_; }
  int coarse_y() const noexcept { return hy_; }
  /// Fine cells per coarse element along x and y.
  int block_x() const noexcept { return bx_; }
  int block_y() const noexcept { return by_; }
  double coarse_hx() const noexcept { return bx_ * fine_hx_; }
  double coarse_hy() const noexcept { return by_ * fine_hy_; }
  int fine_nx() const noexcept { return fine_nx_; }
  int fine_ny() const noexcept { return fine_ny_; }

  const std::vector<Neighborhood>& neighborhoods() const noexcept { return neighborhoods_; }
  int num_neighborhoods() const noexcept { return static_cast<int>(neighborhoods_.size()); }
  const Neighborhood& neighborhood(int k) const { return neighborhoods_.at(static_cast<std::size_t>(k)); }

  /// Local fine mesh covering the neighborhood, in global coordinates.
  FineMesh patch(const Neighborhood& n) const {
    return FineMesh(n.cells_x, n.cells_y, fine_hx_, fine_hy_, Point(n.cell_i0 * fine_hx_, n.cell_j0 * fine_hy_));
  }

  /// Cells of a template patch along x and y.
  std::pair<int, int> template_cells(Template t) const {
    switch (t) {
      case Template::corner: return {bx_, by_};
      case Template::horizontal_edge: return {2 * bx_, by_};
      case Template::vertical_edge: return {bx_, 2 * by_};
      case Template::interior: return {2 * bx_, 2 * by_};
    }
    return {0, 0};
  }

  FineMesh template_patch(Template t) const {
    const auto [cx, cy] = template_cells(t);
    return FineMesh(cx, cy, fine_hx_, fine_hy_);
  }

  int global_cell(const Neighborhood& n, int local_cell) const noexcept {
    const int li = local_cell % n.cells_x, lj = local_cell / n.cells_x;
    return (n.cell_j0 + lj) * fine_nx_ + (n.cell_i0 + li);
  }

  int global_node(const Neighborhood& n, int local_node) const noexcept {
    const int li = local_node % (n.cells_x + 1), lj = local_node / (n.cells_x + 1);
    return (n.cell_j0 + lj) * (fine_nx_ + 1) + (n.cell_i0 + li);
  }

 private:
  int fine_nx_ = 0;
  int fine_ny_ = 0;
  double fine_hx_ = 0.0;
  double fine_hy_ = 0.0;
  int hx_ = 0;
  int hy_ = 0;
  int bx_ = 0;
  int by_ = 0;
  std::vector<Neighborhood> neighborhoods_;
};

inline CoarseGrid build_coarse_grid(const FineMesh& mesh, int hx_count, int hy_count) {
  return CoarseGrid(mesh, hx_count, hy_count);
}

/// Elliptic problems on one patch with Dirichlet data on the whole patch
/// boundary. Holds the affine pieces and the unit-coefficient interior
/// stiffness, whose inverse defines the V inner product (H^1_0 seminorm).
class LocalProblem {
 public:
  LocalProblem() = default;

  explicit LocalProblem(const FineMesh& patch)
      : patch_(patch), op_(patch), dofs_(DofMap::interior(patch)), reduced_(op_.pattern(), dofs_) {
    if (dofs_.num_dofs() == 0) throw Error(ErrorKind::invalid_dimension, "patch has no interior nodes");
    const SparseMatrix unit = op_.combine(Eigen::VectorXd::Ones(op_.num_pieces()));
    v_gram_ = reduced_.gather(unit);
    v_factor_ = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>(v_gram_);
    if (v_factor_->info() != Eigen::Success) throw SolverError("V inner-product factorization failed", 0);
  }

  const FineMesh& patch() const noexcept { return patch_; }
  const AffineOperator& op() const noexcept { return op_; }
  const DofMap& dofs() const noexcept { return dofs_; }
  int num_pieces() const noexcept { return op_.num_pieces(); }
  int num_interior() const noexcept { return dofs_.num_dofs(); }
  int num_nodes() const noexcept { return patch_.num_nodes(); }
  const std::vector<int>& boundary_nodes() const noexcept { return patch_.boundary_nodes(); }

  SparseMatrix assemble(const Eigen::VectorXd& kappa) const { return op_.combine(kappa); }

  /// For each column w (a full nodal field), the interior x solving
  ///   A_II(kappa) x = -(A(kappa) w)_I.
  /// With w zero inside, x + w is the discrete kappa-harmonic extension of w's trace.
  Eigen::MatrixXd correction(const Eigen::VectorXd& kappa, const Eigen::MatrixXd& fields) const {
    const SparseMatrix full = op_.combine(kappa);
    const SparseMatrix reduced = reduced_.gather(full);
    Eigen::SimplicialLLT<SparseMatrix> factor(reduced);
    if (factor.info() != Eigen::Success) throw SolverError("local system factorization failed", 0);
    const Eigen::MatrixXd residual = full * fields;
    Eigen::MatrixXd rhs(num_interior(), fields.cols());
    for (int d = 0; d < num_interior(); ++d) rhs.row(d) = -residual.row(dofs_.node(d));
    Eigen::MatrixXd x = factor.solve(rhs);
    if (factor.info() != Eigen::Success || !x.allFinite()) throw SolverError("local solve failed", 0);
    return x;
  }

  /// Full fields with the given traces and kappa-harmonic interiors.
  /// `traces` has one row per boundary node (boundary_nodes() order).
  Eigen::MatrixXd harmonic_extension(const Eigen::VectorXd& kappa, const Eigen::MatrixXd& traces) const {
    const Eigen::MatrixXd lifts = lift(traces);
    const Eigen::MatrixXd x = correction(kappa, lifts);
    Eigen::MatrixXd out = lifts;
    for (int d = 0; d < num_interior(); ++d) out.row(dofs_.node(d)) = x.row(d);
    return out;
  }

  /// Fields equal to the traces on the boundary and zero inside.
  Eigen::MatrixXd lift(const Eigen::MatrixXd& traces) const {
    if (traces.rows() != static_cast<Eigen::Index>(boundary_nodes().size()))
      throw Error(ErrorKind::invalid_dimension, "trace length != boundary nodes");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(num_nodes(), traces.cols());
    for (std::size_t b = 0; b < boundary_nodes().size(); ++b)
      out.row(boundary_nodes()[b]) = traces.row(static_cast<Eigen::Index>(b));
    return out;
  }

  /// Interior values placed into a zero-trace full field.
  Eigen::VectorXd extend_interior(const Eigen::VectorXd& interior) const {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(num_nodes());
    dofs_.scatter(interior, full);
    return full;
  }

  /// ||x||_V^2 for interior values x.
  double v_norm2(const Eigen::VectorXd& interior) const { return interior.dot(v_gram_ * interior); }

  /// Squared V-norm of the Riesz representer of an interior load vector.
  double dual_norm2(const Eigen::VectorXd& load) const { return load.dot(v_factor_->solve(load)); }

  const SparseMatrix& v_gram() const noexcept { return v_gram_; }

 private:
  FineMesh patch_;
  AffineOperator op_;
  DofMap dofs_;
  ReducedPattern reduced_;
  SparseMatrix v_gram_;
  std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix>> v_factor_;
};

/// One snapshot per distinct boundary node: the kappa-harmonic extension of
/// the nodal delta. Columns follow boundary_nodes() order.
inline Eigen::MatrixXd build_snapshots(const LocalProblem& problem, const Eigen::VectorXd& kappa) {
  if (!(kappa.array() > 0.0).all()) throw Error(ErrorKind::invalid_coefficient, "coefficient must be positive");
  const auto nb = static_cast<Eigen::Index>(problem.boundary_nodes().size());
  return problem.harmonic_extension(kappa, Eigen::MatrixXd::Identity(nb, nb));
}

/// Smallest eigenpairs of the snapshot-space pencil A~ psi = lambda S~ psi.
struct EffectiveBoundarySet {
  Eigen::MatrixXd traces;           // boundary nodes x M, S~-normalised
  Eigen::VectorXd eigenvalues;      // M, ascending
  Eigen::VectorXd all_eigenvalues;  // full snapshot spectrum, for metadata
  Eigen::MatrixXd coefficients;     // snapshots x M (coordinates in R_snap)

  int size() const noexcept { return static_cast<int>(traces.cols()); }
};

inline EffectiveBoundarySet reduce_snapshots(const LocalProblem& problem, const Eigen::MatrixXd& snapshots,
                                             const Eigen::VectorXd& kappa, int count) {
  if (count < 1 || count > snapshots.cols())
    throw Error(ErrorKind::invalid_dimension, "number of effective boundary conditions out of range");
  const SparseMatrix stiffness = problem.assemble(kappa);
  const SparseMatrix mass = assemble_mass(problem.patch(), kappa);
  Eigen::MatrixXd a_snap = snapshots.transpose() * (stiffness * snapshots);
  Eigen::MatrixXd s_snap = snapshots.transpose() * (mass * snapshots);
  a_snap = 0.5 * (a_snap + a_snap.transpose()).eval();
  s_snap = 0.5 * (s_snap + s_snap.transpose()).eval();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(a_snap, s_snap);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::spectral, "snapshot eigenproblem failed");

  EffectiveBoundarySet set;
  set.all_eigenvalues = es.eigenvalues();
  set.eigenvalues = es.eigenvalues().head(count);
  set.coefficients = es.eigenvectors().leftCols(count);
  for (int j = 0; j < count; ++j) {
    auto v = set.coefficients.col(j);
    const double scale = v.cwiseAbs().maxCoeff();
    for (Eigen::Index l = 0; l < v.size(); ++l) {
      if (std::abs(v[l]) > 1e-8 * scale) {
        if (v[l] < 0.0) v = -v;
        break;
      }
    }
  }
  // Snapshot traces are the identity on the boundary, so the trace of psi_j
  // equals its coordinate vector.
  set.traces = set.coefficients;
  return set;
}

/// Bilinear coarse hat function of each neighborhood's node, sampled at the
/// patch nodes. chi_i vanishes on the interior part of the patch boundary.
inline std::vector<Eigen::VectorXd> partition_of_unity(const CoarseGrid& grid) {
  std::vector<Eigen::VectorXd> chi;
  chi.reserve(grid.neighborhoods().size());
  for (const Neighborhood& n : grid.neighborhoods()) {
    const FineMesh patch = grid.patch(n);
    Eigen::VectorXd v(patch.num_nodes());
    for (int k = 0; k < patch.num_nodes(); ++k) {
      const Point x = patch.node_coord(k);
      const double wx = std::max(0.0, 1.0 - std::abs(x.x() - n.node_position.x()) / grid.coarse_hx());
      const double wy = std::max(0.0, 1.0 - std::abs(x.y() - n.node_position.y()) / grid.coarse_hy());
      v[k] = wx * wy;
    }
    chi.push_back(std::move(v));
  }
  return chi;
}

}  // namespace vsms
