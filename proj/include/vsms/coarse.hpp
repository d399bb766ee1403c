#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "vsms/ensemble.hpp"
#include "vsms/error.hpp"
#include "vsms/fem.hpp"
#include "vsms/gmsfem.hpp"
#include "vsms/mesh.hpp"

namespace vsms {

/// How the coarse basis of a given xi is obtained.
///  gmsfem      snapshots and spectral problem at the local coefficient (H)
///  direct_lift harmonic extension of the kappa = 1 effective boundary data (m-bar)
///  vs          evaluation of the offline separated library (<m-bar>)
enum class BasisMethod { gmsfem, direct_lift, vs };

inline const char* method_name(BasisMethod m) {
  switch (m) {
    case BasisMethod::gmsfem: return "gmsfem";
    case BasisMethod::direct_lift: return "direct_lift";
    case BasisMethod::vs: return "vs";
  }
  return "?";
}

/// Multiscale basis as columns of a sparse fine-node matrix R. Column
/// k * M + j belongs to the k-th active neighborhood.
struct CoarseBasis {
  SparseMatrix R;
  std::vector<int> neighborhood;  // owning neighborhood per column
};

/// Builds the coarse basis for a global xi. With Dirichlet data only
/// neighborhoods of interior coarse nodes carry basis functions.
class BasisBuilder {
 public:
  BasisBuilder(const FineMesh& mesh, const CoarseGrid& grid, bool dirichlet, int per_neighborhood)
      : mesh_(mesh), grid_(grid), m_(per_neighborhood) {
    if (per_neighborhood < 1) throw Error(ErrorKind::invalid_dimension, "need at least one basis function per neighborhood");
    if (grid.fine_nx() != mesh.nx() || grid.fine_ny() != mesh.ny())
      throw Error(ErrorKind::nesting, "coarse grid was built for a different fine mesh");
    const auto chi = partition_of_unity(grid);
    for (int k = 0; k < grid.num_neighborhoods(); ++k) {
      const Neighborhood& n = grid.neighborhood(k);
      if (dirichlet && n.on_domain_boundary) continue;
      Active a;
      a.index = k;
      a.kind = n.kind;
      const FineMesh patch = grid.patch(n);
      a.cells.resize(static_cast<std::size_t>(patch.num_cells()));
      for (int c = 0; c < patch.num_cells(); ++c) a.cells[static_cast<std::size_t>(c)] = grid.global_cell(n, c);
      for (int v = 0; v < patch.num_nodes(); ++v) {
        if (chi[static_cast<std::size_t>(k)][v] != 0.0) {
          a.support.push_back(v);
          a.global_nodes.push_back(grid.global_node(n, v));
          a.chi.push_back(chi[static_cast<std::size_t>(k)][v]);
        }
      }
      active_.push_back(std::move(a));
    }
    for (Template t : all_templates) problems_[static_cast<std::size_t>(t)] = LocalProblem(grid.template_patch(t));
  }

  int per_neighborhood() const noexcept { return m_; }
  int num_active() const noexcept { return static_cast<int>(active_.size()); }
  int num_basis() const noexcept { return num_active() * m_; }
  const CoarseGrid& grid() const noexcept { return grid_; }
  const FineMesh& mesh() const noexcept { return mesh_; }
  const LocalProblem& problem(Template t) const { return problems_[static_cast<std::size_t>(t)]; }
  /// Neighborhood index of each active neighborhood.
  std::vector<int> active_neighborhoods() const {
    std::vector<int> out;
    for (const auto& a : active_) out.push_back(a.index);
    return out;
  }

  /// Effective boundary data at kappa = 1 used by direct_lift. Taken from the
  /// library when one is attached, otherwise computed here.
  void set_reference_traces(const std::array<Eigen::MatrixXd, 4>& traces) {
    for (const auto& t : traces)
      if (t.cols() != m_) throw Error(ErrorKind::invalid_dimension, "reference traces have the wrong width");
    traces_ = traces;
    have_traces_ = true;
  }

  void compute_reference_traces() {
    std::array<Eigen::MatrixXd, 4> t;
    for (Template k : all_templates) t[static_cast<std::size_t>(k)] = template_boundary(grid_, k, m_).boundary.traces;
    set_reference_traces(t);
  }

  void attach_library(const StochasticBasisLibrary* lib) {
    if (lib != nullptr) {
      if (lib->basis_per_neighborhood() != m_)
        throw Error(ErrorKind::template_mismatch, "library basis count differs from the requested one");
      for (Template t : all_templates) {
        const auto& e = lib->entry(t);
        const auto [cx, cy] = grid_.template_cells(t);
        if (e.cells_x != cx || e.cells_y != cy)
          throw Error(ErrorKind::template_mismatch, std::string("library template ") + template_name(t) + " has a different patch size");
      }
      std::array<Eigen::MatrixXd, 4> t;
      for (Template k : all_templates) t[static_cast<std::size_t>(k)] = lib->entry(k).boundary.traces;
      set_reference_traces(t);
    }
    library_ = lib;
  }

  CoarseBasis build(BasisMethod method, const Eigen::VectorXd& xi) const {
    if (xi.size() != mesh_.num_cells()) throw Error(ErrorKind::invalid_dimension, "xi length != number of cells");
    if (method == BasisMethod::vs && library_ == nullptr) throw Error(ErrorKind::stale_library, "no library attached");
    if (method == BasisMethod::direct_lift && !have_traces_)
      throw Error(ErrorKind::invalid_dimension, "direct lift needs reference traces");
    std::vector<Eigen::Triplet<double>> trip;
    std::size_t nnz = 0;
    for (const auto& a : active_) nnz += a.support.size();
    trip.reserve(nnz * static_cast<std::size_t>(m_));
    CoarseBasis out;
    out.neighborhood.reserve(static_cast<std::size_t>(num_basis()));
    Eigen::VectorXd kappa;
    for (std::size_t k = 0; k < active_.size(); ++k) {
      const Active& a = active_[k];
      kappa.resize(static_cast<Eigen::Index>(a.cells.size()));
      for (std::size_t c = 0; c < a.cells.size(); ++c) kappa[static_cast<Eigen::Index>(c)] = std::exp(xi[a.cells[c]]);
      const Eigen::MatrixXd local = local_basis(method, a.kind, kappa);
      for (int j = 0; j < m_; ++j) {
        const int col = static_cast<int>(k) * m_ + j;
        for (std::size_t s = 0; s < a.support.size(); ++s)
          trip.emplace_back(a.global_nodes[s], col, a.chi[s] * local(a.support[s], j));
        out.neighborhood.push_back(a.index);
      }
    }
    out.R.resize(mesh_.num_nodes(), num_basis());
    out.R.setFromTriplets(trip.begin(), trip.end());
    return out;
  }

  /// Patch fields (before the partition of unity), one column per basis function.
  Eigen::MatrixXd local_basis(BasisMethod method, Template t, const Eigen::VectorXd& kappa) const {
    const LocalProblem& lp = problems_[static_cast<std::size_t>(t)];
    switch (method) {
      case BasisMethod::gmsfem: {
        const Eigen::MatrixXd snaps = build_snapshots(lp, kappa);
        const EffectiveBoundarySet set = reduce_snapshots(lp, snaps, kappa, m_);
        return snaps * set.coefficients;
      }
      case BasisMethod::direct_lift:
        return lp.harmonic_extension(kappa, traces_[static_cast<std::size_t>(t)]);
      case BasisMethod::vs:
        return library_->entry(t).evaluate(kappa);
    }
    return {};
  }

 private:
  struct Active {
    int index = 0;
    Template kind = Template::interior;
    std::vector<int> cells;         // global cell per template cell
    std::vector<int> support;       // patch nodes where chi != 0
    std::vector<int> global_nodes;  // matching global nodes
    std::vector<double> chi;
  };

  FineMesh mesh_;
  CoarseGrid grid_;
  int m_;
  std::vector<Active> active_;
  std::array<LocalProblem, 4> problems_;
  std::array<Eigen::MatrixXd, 4> traces_;
  bool have_traces_ = false;
  const StochasticBasisLibrary* library_ = nullptr;
};

/// Problem data plus the observation operator shared by fine and coarse maps.
struct ForwardSpec {
  ParabolicProblem problem;
  std::vector<Point> sensors;
  std::vector<double> obs_times;

  /// Step index of each observation time; all must be multiples of dt.
  std::vector<int> obs_steps() const {
    std::vector<int> steps;
    const int n = problem.num_steps();
    for (double t : obs_times) {
      const double r = t / problem.dt;
      const long k = std::lround(r);
      if (k < 1 || k > n || std::abs(r - static_cast<double>(k)) > 1e-8 * std::max(1.0, r))
        throw Error(ErrorKind::invalid_dimension, "observation time is not a step of the time grid");
      steps.push_back(static_cast<int>(k));
    }
    return steps;
  }
  int num_data() const noexcept { return static_cast<int>(sensors.size() * obs_times.size()); }
};

/// Coarse Galerkin system for one basis: u = u_g + R alpha with u_g the
/// interpolant of the Dirichlet data (zero for no-flow).
struct CoarseSystem {
  SparseMatrix R;
  Eigen::MatrixXd stiffness;  // R^T A(xi) R
  Eigen::MatrixXd mass;       // R^T M R
  Eigen::VectorXd load;       // R^T (M f - A(xi) u_g)
  Eigen::VectorXd lift;       // u_g (fine nodal)
  Eigen::VectorXd alpha0;     // coordinates of -u_g projected, or zero
  bool dirichlet = false;
};

class CoarseSolver {
 public:
  CoarseSolver(const FineMesh& mesh, const ParabolicProblem& problem)
      : mesh_(mesh), op_(mesh), mass_(assemble_mass(mesh)), problem_(problem) {
    problem.validate(mesh);
    load_ = mass_ * problem.source;
    if (problem.dirichlet) {
      lift_ = Eigen::VectorXd::Zero(mesh.num_nodes());
      for (int n = 0; n < mesh.num_nodes(); ++n) lift_[n] = (*problem.dirichlet)(mesh.node_coord(n));
    }
  }

  const ParabolicProblem& problem() const noexcept { return problem_; }
  const FineMesh& mesh() const noexcept { return mesh_; }

  CoarseSystem assemble(const CoarseBasis& basis, const Eigen::VectorXd& xi) const {
    if (basis.R.rows() != mesh_.num_nodes()) throw Error(ErrorKind::invalid_dimension, "basis rows != fine nodes");
    const SparseMatrix a = op_.combine(xi.array().exp().matrix());
    CoarseSystem s;
    s.R = basis.R;
    const SparseMatrix rt = basis.R.transpose();
    const SparseMatrix ar = a * basis.R;
    const SparseMatrix mr = mass_ * basis.R;
    s.stiffness = Eigen::MatrixXd(rt * ar);
    s.mass = Eigen::MatrixXd(rt * mr);
    s.stiffness = 0.5 * (s.stiffness + s.stiffness.transpose()).eval();
    s.mass = 0.5 * (s.mass + s.mass.transpose()).eval();
    s.dirichlet = problem_.dirichlet.has_value();
    if (s.dirichlet) {
      s.lift = lift_;
      s.load = rt * (load_ - a * lift_);
      Eigen::LLT<Eigen::MatrixXd> mc(s.mass);
      if (mc.info() != Eigen::Success) throw SolverError("coarse mass matrix is not positive definite", 0);
      s.alpha0 = mc.solve(-(rt * (mass_ * lift_)));
    } else {
      s.lift = Eigen::VectorXd::Zero(mesh_.num_nodes());
      s.load = rt * load_;
      s.alpha0 = Eigen::VectorXd::Zero(basis.R.cols());
    }
    return s;
  }

  /// Coarse coordinates alpha^0..alpha^steps.
  std::vector<Eigen::VectorXd> step(const CoarseSystem& s, int steps = -1) const {
    const int n = steps < 0 ? problem_.num_steps() : steps;
    const double dt = problem_.dt, c = problem_.storage;
    const Eigen::MatrixXd lhs = c * s.mass + dt * s.stiffness;
    Eigen::LLT<Eigen::MatrixXd> factor(lhs);
    if (factor.info() != Eigen::Success) throw SolverError("coarse system is not positive definite", 0);
    const Eigen::MatrixXd cm = c * s.mass;
    const Eigen::VectorXd f = dt * s.load;
    std::vector<Eigen::VectorXd> alpha;
    alpha.reserve(static_cast<std::size_t>(n) + 1);
    alpha.push_back(s.alpha0);
    for (int k = 1; k <= n; ++k) {
      Eigen::VectorXd next = factor.solve(cm * alpha.back() + f);
      if (!next.allFinite()) throw SolverError("coarse solve produced non-finite values", k);
      alpha.push_back(std::move(next));
    }
    return alpha;
  }

  /// Fine reconstructions u^n = u_g + R alpha^n; u^0 is reported as zero.
  Trajectory reconstruct(const CoarseSystem& s, const std::vector<Eigen::VectorXd>& alpha) const {
    Trajectory t;
    t.dt = problem_.dt;
    t.states.reserve(alpha.size());
    for (std::size_t k = 0; k < alpha.size(); ++k) {
      if (k == 0) t.states.push_back(Eigen::VectorXd::Zero(mesh_.num_nodes()));
      else t.states.push_back(s.lift + s.R * alpha[k]);
    }
    return t;
  }

  Trajectory solve(const CoarseBasis& basis, const Eigen::VectorXd& xi) const {
    const CoarseSystem s = assemble(basis, xi);
    return reconstruct(s, step(s));
  }

 private:
  FineMesh mesh_;
  AffineOperator op_;
  SparseMatrix mass_;
  ParabolicProblem problem_;
  Eigen::VectorXd load_;
  Eigen::VectorXd lift_;
};

/// Point values at the observation steps, time-major.
inline Eigen::VectorXd observe_trajectory(const PointSampler& sampler, const std::vector<int>& steps, const Trajectory& traj) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(sampler.size() * steps.size()));
  Eigen::Index r = 0;
  for (int s : steps) {
    if (s < 0 || s > traj.num_steps()) throw Error(ErrorKind::invalid_dimension, "observation step beyond trajectory");
    for (std::size_t k = 0; k < sampler.size(); ++k) d[r++] = sampler.sample(k, traj.states[static_cast<std::size_t>(s)]);
  }
  return d;
}

using ForwardMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Reference map G: fine solve, sampled at the sensors.
class FineForward {
 public:
  FineForward(const FineMesh& mesh, const ForwardSpec& spec)
      : spec_(spec), solver_(mesh, spec.problem.dirichlet.has_value()), sampler_(make_point_sampler(mesh, spec.sensors)),
        steps_(spec.obs_steps()) {}

  Eigen::VectorXd operator()(const Eigen::VectorXd& xi) const {
    const int last = *std::max_element(steps_.begin(), steps_.end());
    return observe_trajectory(sampler_, steps_, solver_.solve(xi, spec_.problem, last));
  }

  const ForwardSpec& spec() const noexcept { return spec_; }
  const FineSolver& solver() const noexcept { return solver_; }

 private:
  ForwardSpec spec_;
  FineSolver solver_;
  PointSampler sampler_;
  std::vector<int> steps_;
};

/// Surrogate map G_N: multiscale basis for xi, coarse stepping, and sampling
/// through the basis without forming fine states.
class CoarseForward {
 public:
  CoarseForward(const FineMesh& mesh, const CoarseGrid& grid, const ForwardSpec& spec, int per_neighborhood,
                BasisMethod method)
      : spec_(spec), builder_(mesh, grid, spec.problem.dirichlet.has_value(), per_neighborhood), solver_(mesh, spec.problem),
        sampler_(make_point_sampler(mesh, spec.sensors)), steps_(spec.obs_steps()), method_(method) {
    if (method == BasisMethod::direct_lift) builder_.compute_reference_traces();
  }

  BasisBuilder& builder() noexcept { return builder_; }
  const BasisBuilder& builder() const noexcept { return builder_; }
  const CoarseSolver& solver() const noexcept { return solver_; }
  BasisMethod method() const noexcept { return method_; }

  void attach_library(const StochasticBasisLibrary* lib) { builder_.attach_library(lib); }

  Eigen::VectorXd operator()(const Eigen::VectorXd& xi) const {
    const CoarseBasis basis = builder_.build(method_, xi);
    const CoarseSystem s = solver_.assemble(basis, xi);
    const int last = *std::max_element(steps_.begin(), steps_.end());
    const std::vector<Eigen::VectorXd> alpha = solver_.step(s, last);
    // Sensor rows of R and u_g.
    const Eigen::Index ns = static_cast<Eigen::Index>(sampler_.size());
    Eigen::MatrixXd sr = Eigen::MatrixXd::Zero(ns, s.R.cols());
    Eigen::VectorXd sg(ns);
    const SparseMatrix rt = s.R.transpose();
    for (Eigen::Index k = 0; k < ns; ++k) {
      sg[k] = sampler_.sample(static_cast<std::size_t>(k), s.lift);
      const auto& nodes = sampler_.nodes[static_cast<std::size_t>(k)];
      const auto& w = sampler_.weights[static_cast<std::size_t>(k)];
      for (int a = 0; a < 4; ++a)
        for (SparseMatrix::InnerIterator it(rt, nodes[a]); it; ++it) sr(k, it.row()) += w[a] * it.value();
    }
    Eigen::VectorXd d(ns * static_cast<Eigen::Index>(steps_.size()));
    for (std::size_t t = 0; t < steps_.size(); ++t) d.segment(static_cast<Eigen::Index>(t) * ns, ns) = sg + sr * alpha[static_cast<std::size_t>(steps_[t])];
    return d;
  }

 private:
  ForwardSpec spec_;
  BasisBuilder builder_;
  CoarseSolver solver_;
  PointSampler sampler_;
  std::vector<int> steps_;
  BasisMethod method_;
};

}  // namespace vsms
