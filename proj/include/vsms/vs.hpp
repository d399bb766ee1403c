#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "vsms/error.hpp"
#include "vsms/gmsfem.hpp"
#include "vsms/random_field.hpp"

namespace vsms {

/// Local prior samples xi on the cells of one patch.
struct TrainingSet {
  std::vector<Eigen::VectorXd> xi;

  int size() const noexcept { return static_cast<int>(xi.size()); }
};

inline TrainingSet sample_training_set(const GaussianPrior& local_prior, int count, Rng& rng) {
  if (count < 1) throw Error(ErrorKind::invalid_dimension, "training set must be non-empty");
  TrainingSet set;
  set.xi.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) set.xi.push_back(sample_prior(local_prior, rng));
  return set;
}

struct GreedyOptions {
  int max_terms = 20;
  double relative_zero = 1e-12;  // stop once ||Phi_k||_V < relative_zero * ||Phi_1||_V
};

/// u(xi) ~ lift + sum_k eta_k(xi) Phi_k with xi-independent modes Phi_k
/// (zero trace) and coefficients given by a recurrence in kappa = exp(xi):
///   eta_k = (b^k.kappa - sum_{q<k} eta_q (A^{kq}.kappa)) / (abar^k.kappa)
/// where b^k_p = -a_p(lift, Phi_k), A^{kq}_p = a_p(Phi_q, Phi_k) and
/// abar^k_p = a_p(Phi_k, Phi_k).
class SeparatedRepresentation {
 public:
  SeparatedRepresentation() = default;

  SeparatedRepresentation(const LocalProblem& problem, Eigen::VectorXd lift)
      : num_pieces_(problem.num_pieces()), lift_(std::move(lift)) {
    if (lift_.size() != problem.num_nodes()) throw Error(ErrorKind::invalid_dimension, "lift length != patch nodes");
    modes_.resize(problem.num_nodes(), 0);
  }

  int num_terms() const noexcept { return static_cast<int>(modes_.cols()); }
  int num_pieces() const noexcept { return num_pieces_; }
  const Eigen::VectorXd& lift() const noexcept { return lift_; }
  /// Full nodal fields of the modes, one per column.
  const Eigen::MatrixXd& modes() const noexcept { return modes_; }
  const Eigen::MatrixXd& b() const noexcept { return b_; }
  const Eigen::MatrixXd& abar() const noexcept { return abar_; }
  const Eigen::MatrixXd& cross() const noexcept { return cross_; }

  /// Appends Phi_{k} and its coefficient rows.
  void append(const LocalProblem& problem, const Eigen::VectorXd& mode) {
    const int k = num_terms();
    const AffineOperator& op = problem.op();
    modes_.conservativeResize(Eigen::NoChange, k + 1);
    modes_.col(k) = mode;
    b_.conservativeResize(k + 1, num_pieces_);
    abar_.conservativeResize(k + 1, num_pieces_);
    cross_.conservativeResize(k * (k + 1) / 2, num_pieces_);
    const int base = k * (k - 1) / 2;
    for (int p = 0; p < num_pieces_; ++p) {
      b_(k, p) = -op.piece_form(p, lift_, mode);
      abar_(k, p) = op.piece_form(p, mode, mode);
      for (int q = 0; q < k; ++q) cross_(base + q, p) = op.piece_form(p, modes_.col(q), mode);
    }
  }

  /// Builds from stored blocks (library load).
  static SeparatedRepresentation from_blocks(int num_pieces, Eigen::VectorXd lift, Eigen::MatrixXd modes, Eigen::MatrixXd b,
                                             Eigen::MatrixXd abar, Eigen::MatrixXd cross) {
    const Eigen::Index n = modes.cols();
    if (b.rows() != n || abar.rows() != n || cross.rows() != n * (n - 1) / 2 || b.cols() != num_pieces ||
        abar.cols() != num_pieces || (cross.rows() > 0 && cross.cols() != num_pieces) || lift.size() != modes.rows())
      throw Error(ErrorKind::format, "inconsistent separated-representation blocks");
    SeparatedRepresentation r;
    r.num_pieces_ = num_pieces;
    r.lift_ = std::move(lift);
    r.modes_ = std::move(modes);
    r.b_ = std::move(b);
    r.abar_ = std::move(abar);
    r.cross_ = std::move(cross);
    if (r.cross_.cols() != num_pieces) r.cross_.resize(0, num_pieces);
    return r;
  }

  /// eta(kappa) for the first `terms` modes (all by default).
  Eigen::VectorXd eval_eta(const Eigen::VectorXd& kappa, int terms = -1) const {
    if (kappa.size() != num_pieces_) throw Error(ErrorKind::invalid_dimension, "coefficient length != number of pieces");
    const int n = terms < 0 ? num_terms() : std::min(terms, num_terms());
    Eigen::VectorXd eta(n);
    if (n == 0) return eta;
    const Eigen::VectorXd num = b_.topRows(n) * kappa;
    const Eigen::VectorXd den = abar_.topRows(n) * kappa;
    const Eigen::VectorXd mix = cross_.topRows(n * (n - 1) / 2) * kappa;
    for (int k = 0; k < n; ++k) {
      if (!(den[k] > std::numeric_limits<double>::min()))
        throw Error(ErrorKind::degenerate_denominator, "abar^k . kappa is not positive");
      double v = num[k];
      const int base = k * (k - 1) / 2;
      for (int q = 0; q < k; ++q) v -= eta[q] * mix[base + q];
      eta[k] = v / den[k];
    }
    return eta;
  }

  /// lift + sum_k eta_k Phi_k as a full nodal field.
  Eigen::VectorXd eval_solution(const Eigen::VectorXd& kappa, int terms = -1) const {
    const Eigen::VectorXd eta = eval_eta(kappa, terms);
    return lift_ + modes_.leftCols(eta.size()) * eta;
  }

 private:
  int num_pieces_ = 0;
  Eigen::VectorXd lift_;
  Eigen::MatrixXd modes_;
  Eigen::MatrixXd b_;
  Eigen::MatrixXd abar_;
  Eigen::MatrixXd cross_;  // row k(k-1)/2 + q holds A^{kq}
};

/// Squared V-norm of the residual functional v -> -a(w, v; kappa) over
/// interior test functions, where w is a full nodal field.
inline double residual_indicator2(const LocalProblem& problem, const Eigen::VectorXd& kappa, const Eigen::VectorXd& w) {
  const Eigen::VectorXd load = problem.dofs().restrict(problem.assemble(kappa) * w);
  const double r = problem.dual_norm2(load);
  if (!std::isfinite(r)) throw Error(ErrorKind::indicator, "non-finite error indicator");
  return r;
}

/// Error indicator of the current representation at one coefficient.
inline double error_indicator(const LocalProblem& problem, const SeparatedRepresentation& rep, const Eigen::VectorXd& kappa) {
  return std::sqrt(residual_indicator2(problem, kappa, rep.eval_solution(kappa)));
}

struct GreedyResult {
  SeparatedRepresentation rep;
  std::vector<int> selected;                 // indices into the training set
  std::vector<double> max_indicator;         // entry k-1: max over the set before term k+1
  std::vector<double> mode_norms;            // ||Phi_k||_V
  bool stopped_early = false;
};

/// Greedy construction of the separated representation over a training set.
/// Term 1 uses a uniformly drawn sample; later terms the sample maximising the
/// error indicator (lowest index on ties).
inline GreedyResult vs_greedy(const LocalProblem& problem, const Eigen::VectorXd& lift, const TrainingSet& training,
                              const GreedyOptions& options, Rng& rng) {
  if (training.size() == 0) throw Error(ErrorKind::invalid_dimension, "empty training set");
  if (options.max_terms < 1) throw Error(ErrorKind::invalid_dimension, "need at least one term");
  std::vector<Eigen::VectorXd> kappas;
  kappas.reserve(training.xi.size());
  for (const auto& xi : training.xi) {
    if (xi.size() != problem.num_pieces()) throw Error(ErrorKind::invalid_dimension, "training sample length != pieces");
    kappas.push_back(xi.array().exp().matrix());
  }

  GreedyResult out;
  out.rep = SeparatedRepresentation(problem, lift);
  std::uniform_int_distribution<int> pick(0, training.size() - 1);
  int next = pick(rng);
  double first_norm = 0.0;
  for (int k = 0; k < options.max_terms; ++k) {
    if (k > 0) {
      double best = -1.0;
      int arg = 0;
      for (int s = 0; s < training.size(); ++s) {
        const double d = error_indicator(problem, out.rep, kappas[static_cast<std::size_t>(s)]);
        if (d > best) {
          best = d;
          arg = s;
        }
      }
      out.max_indicator.push_back(best);
      next = arg;
    }
    const Eigen::VectorXd& kappa = kappas[static_cast<std::size_t>(next)];
    const Eigen::VectorXd x = problem.correction(kappa, out.rep.eval_solution(kappa));
    const double norm = std::sqrt(problem.v_norm2(x));
    if (k == 0) first_norm = norm;
    if (!(norm > options.relative_zero * first_norm) || norm == 0.0) {
      out.stopped_early = true;
      break;
    }
    out.rep.append(problem, problem.extend_interior(x));
    out.selected.push_back(next);
    out.mode_norms.push_back(norm);
  }
  return out;
}

}  // namespace vsms
