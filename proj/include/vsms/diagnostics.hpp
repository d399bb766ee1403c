#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "vsms/coarse.hpp"
#include "vsms/error.hpp"
#include "vsms/fem.hpp"
#include "vsms/parallel.hpp"
#include "vsms/random_field.hpp"

namespace vsms {

/// Accumulates fine-vs-coarse trajectory errors over samples:
///   eps_inf = max_n max_{samples, nodes} |e|
///   eps_2   = max_n sqrt(mean_samples e^T M e)
class ForwardErrorAccumulator {
 public:
  explicit ForwardErrorAccumulator(const SparseMatrix& mass) : mass_(mass) {}

  /// Per-step squared M-norm and max-norm of one sample's error.
  struct Contribution {
    Eigen::VectorXd sum_sq;
    Eigen::VectorXd max_abs;
  };

  Contribution contribution(const Trajectory& reference, const Trajectory& approx) const {
    if (reference.states.size() != approx.states.size())
      throw Error(ErrorKind::invalid_dimension, "trajectories have different lengths");
    const auto n = static_cast<Eigen::Index>(reference.states.size());
    Contribution c{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::VectorXd e = reference.states[static_cast<std::size_t>(k)] - approx.states[static_cast<std::size_t>(k)];
      c.sum_sq[k] = e.dot(mass_ * e);
      c.max_abs[k] = e.cwiseAbs().maxCoeff();
    }
    return c;
  }

  void add(const Contribution& c) {
    if (sum_sq_.size() == 0) {
      sum_sq_ = Eigen::VectorXd::Zero(c.sum_sq.size());
      max_abs_ = Eigen::VectorXd::Zero(c.sum_sq.size());
    } else if (sum_sq_.size() != c.sum_sq.size()) {
      throw Error(ErrorKind::invalid_dimension, "trajectory length changed between samples");
    }
    sum_sq_ += c.sum_sq;
    max_abs_ = max_abs_.cwiseMax(c.max_abs);
    ++count_;
  }

  void add(const Trajectory& reference, const Trajectory& approx) {
    if (sum_sq_.size() != 0 && sum_sq_.size() != static_cast<Eigen::Index>(reference.states.size()))
      throw Error(ErrorKind::invalid_dimension, "trajectory length changed between samples");
    add(contribution(reference, approx));
  }

  int count() const noexcept { return count_; }
  /// Per-step sqrt(mean e^T M e).
  Eigen::VectorXd l2_by_step() const { return (sum_sq_ / std::max(count_, 1)).cwiseSqrt(); }
  const Eigen::VectorXd& max_by_step() const noexcept { return max_abs_; }
  double eps_2() const { return count_ ? l2_by_step().maxCoeff() : 0.0; }
  double eps_inf() const { return count_ ? max_abs_.maxCoeff() : 0.0; }

 private:
  SparseMatrix mass_;
  Eigen::VectorXd sum_sq_;
  Eigen::VectorXd max_abs_;
  int count_ = 0;
};

struct ForwardErrors {
  double eps_inf = 0.0;
  double eps_2 = 0.0;
  double tau = 0.0;  // mean seconds of basis construction per sample
  int samples = 0;
};

/// Fine vs multiscale trajectories at prior samples. Only the basis
/// construction is timed. Samples are drawn up front, so the result does not
/// depend on `threads`.
inline ForwardErrors forward_errors(const FineSolver& fine, const CoarseSolver& coarse, const BasisBuilder& builder,
                                    BasisMethod method, const GaussianPrior& prior, int samples, Rng& rng, int threads = 1) {
  if (samples < 1) throw Error(ErrorKind::insufficient_samples, "need at least one sample");
  ForwardErrorAccumulator acc(fine.mass());
  std::vector<Eigen::VectorXd> xs;
  for (int s = 0; s < samples; ++s) xs.push_back(sample_prior(prior, rng));
  std::vector<ForwardErrorAccumulator::Contribution> parts(static_cast<std::size_t>(samples));
  std::vector<double> seconds(static_cast<std::size_t>(samples));
  parallel_for(samples, threads, [&](int s) {
    const auto& xi = xs[static_cast<std::size_t>(s)];
    const auto t0 = std::chrono::steady_clock::now();
    const CoarseBasis basis = builder.build(method, xi);
    seconds[static_cast<std::size_t>(s)] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    parts[static_cast<std::size_t>(s)] = acc.contribution(fine.solve(xi, coarse.problem()), coarse.solve(basis, xi));
  });
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    acc.add(parts[static_cast<std::size_t>(s)]);
    total += seconds[static_cast<std::size_t>(s)];
  }
  return {acc.eps_inf(), acc.eps_2(), total / samples, samples};
}

/// Mean seconds per basis construction over `evaluations` prior samples.
inline double time_basis(const BasisBuilder& builder, BasisMethod method, const GaussianPrior& prior, int evaluations,
                         Rng& rng) {
  if (evaluations < 1) throw Error(ErrorKind::insufficient_samples, "need at least one evaluation");
  std::vector<Eigen::VectorXd> xs;
  for (int s = 0; s < evaluations; ++s) xs.push_back(sample_prior(prior, rng));
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& xi : xs) builder.build(method, xi);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return total / evaluations;
}

/// Monte Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

/// E_{pi0} |G(xi) - G_N(xi)|^2 over prior draws.
inline Estimate l2_pi0_error(const ForwardMap& fine, const ForwardMap& surrogate, const GaussianPrior& prior, int n_mc, Rng& rng,
                             int threads = 1) {
  if (n_mc < 2) throw Error(ErrorKind::insufficient_samples, "need at least two Monte Carlo samples");
  std::vector<Eigen::VectorXd> xs;
  for (int s = 0; s < n_mc; ++s) xs.push_back(sample_prior(prior, rng));
  Eigen::VectorXd v(n_mc);
  parallel_for(n_mc, threads, [&](int s) { v[s] = (fine(xs[static_cast<std::size_t>(s)]) - surrogate(xs[static_cast<std::size_t>(s)])).squaredNorm(); });
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / (n_mc - 1);
  return {mean, std::sqrt(var / n_mc), n_mc};
}

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double ess = 0.0;  // effective sample size of the weights exp(-a)
  int samples = 0;
};

/// D_KL(pi_N || pi) from draws of pi_N, given a = Phi - Phi_N = log pi~_N - log pi~
/// at those draws. With Z / Z_N = E_{pi_N}[exp(-a)],
///   D = mean(a) + log mean(exp(-a)).
/// The standard error is a bootstrap over draws.
inline KlEstimate kl_estimate(const std::vector<double>& log_ratio, Rng& rng, int bootstrap = 200) {
  const int n = static_cast<int>(log_ratio.size());
  if (n < 2) throw Error(ErrorKind::insufficient_samples, "need at least two draws");
  const auto estimate = [](const auto& pick, int count) {
    double shift = std::numeric_limits<double>::infinity();
    double mean_a = 0.0;
    for (int k = 0; k < count; ++k) {
      mean_a += pick(k);
      shift = std::min(shift, pick(k));
    }
    mean_a /= count;
    double sw = 0.0;
    for (int k = 0; k < count; ++k) sw += std::exp(-(pick(k) - shift));
    return mean_a + (std::log(sw / count) - shift);
  };
  KlEstimate out;
  out.samples = n;
  out.value = estimate([&](int k) { return log_ratio[static_cast<std::size_t>(k)]; }, n);
  double shift = *std::min_element(log_ratio.begin(), log_ratio.end());
  double sw = 0.0, sw2 = 0.0;
  for (double a : log_ratio) {
    const double w = std::exp(-(a - shift));
    sw += w;
    sw2 += w * w;
  }
  out.ess = sw * sw / sw2;
  if (out.ess < 10.0) throw Error(ErrorKind::unreliable_estimate, "importance weights have effective sample size below 10");
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> idx(static_cast<std::size_t>(n));
  double m = 0.0, m2 = 0.0;
  for (int b = 0; b < bootstrap; ++b) {
    for (int& i : idx) i = pick(rng);
    const double v = estimate([&](int k) { return log_ratio[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])]; }, n);
    m += v;
    m2 += v * v;
  }
  m /= bootstrap;
  out.std_error = std::sqrt(std::max(0.0, m2 / bootstrap - m * m));
  return out;
}

/// Batch-means standard error of the mean of a correlated series.
inline double batch_means_se(const std::vector<double>& series, int batches = 20) {
  const int n = static_cast<int>(series.size());
  if (batches < 2 || n < 2 * batches) throw Error(ErrorKind::insufficient_samples, "series too short for batch means");
  const int len = n / batches;
  std::vector<double> means(static_cast<std::size_t>(batches), 0.0);
  for (int b = 0; b < batches; ++b) {
    for (int k = 0; k < len; ++k) means[static_cast<std::size_t>(b)] += series[static_cast<std::size_t>(b * len + k)];
    means[static_cast<std::size_t>(b)] /= len;
  }
  double mu = 0.0;
  for (double v : means) mu += v;
  mu /= batches;
  double var = 0.0;
  for (double v : means) var += (v - mu) * (v - mu);
  var /= (batches - 1);
  return std::sqrt(var / batches);
}

/// Kolmogorov-Smirnov distance between a sample and N(mu, sd^2).
inline double ks_normal(std::vector<double> sample, double mu, double sd) {
  if (sample.empty()) throw Error(ErrorKind::insufficient_samples, "empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t k = 0; k < sample.size(); ++k) {
    const double f = 0.5 * std::erfc(-(sample[k] - mu) / (sd * std::sqrt(2.0)));
    d = std::max({d, std::abs(f - static_cast<double>(k) / n), std::abs(static_cast<double>(k + 1) / n - f)});
  }
  return d;
}

}  // namespace vsms
