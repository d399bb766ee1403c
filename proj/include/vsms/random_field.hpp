#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "vsms/error.hpp"
#include "vsms/mesh.hpp"

namespace vsms {

using Rng = std::mt19937_64;

/// Squared-exponential kernel sigma^2 exp(-dx^2/2lx^2 - dy^2/2ly^2).
struct KernelParams {
  double variance = 0.1;
  double length_x = 0.07;
  double length_y = 0.07;

  void validate() const {
    if (!(variance > 0.0) || !(length_x > 0.0) || !(length_y > 0.0))
      throw Error(ErrorKind::invalid_coefficient, "kernel parameters must be strictly positive");
  }

  double operator()(const Point& a, const Point& b) const noexcept {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    return variance * std::exp(-dx * dx / (2.0 * length_x * length_x) - dy * dy / (2.0 * length_y * length_y));
  }
};

inline KernelParams rescale_lengths(const KernelParams& params, double factor) {
  if (!(factor > 0.0)) throw Error(ErrorKind::invalid_coefficient, "length-scale factor must be positive");
  return {params.variance, params.length_x * factor, params.length_y * factor};
}

/// Centered Gaussian prior N(0, Sigma + jitter I) over the cell centers of a
/// tensor grid.
///
/// The kernel is separable and the centers form a tensor grid, so Sigma is the
/// Kronecker product variance * Ky (x) Kx of two 1D correlation matrices. Both
/// are diagonalised once; the factor L = (Qy (x) Qx) D with
/// D = sqrt(variance * lambda_x lambda_y + jitter) satisfies L L^T = Sigma + jitter I
/// exactly and is applied in O(n^1.5) without forming the dense covariance.
class GaussianPrior {
 public:
  static constexpr double default_relative_jitter = 1e-8;

  GaussianPrior() = default;

  GaussianPrior(int nx, int ny, double hx, double hy, const KernelParams& params, double jitter)
      : nx_(nx), ny_(ny), hx_(hx), hy_(hy), params_(params) {
    params.validate();
    if (nx < 1 || ny < 1) throw Error(ErrorKind::invalid_dimension, "prior grid needs cells");
    if (!(jitter >= 0.0)) throw Error(ErrorKind::invalid_coefficient, "jitter must be non-negative");
    const auto decompose = [](int n, double h, double len, Eigen::MatrixXd& q, Eigen::VectorXd& lam) {
      Eigen::MatrixXd k(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          const double d = (a - b) * h;
          k(a, b) = std::exp(-d * d / (2.0 * len * len));
        }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
      if (es.info() != Eigen::Success)
        throw Error(ErrorKind::ill_conditioned_covariance, "1D correlation eigendecomposition failed");
      q = es.eigenvectors();
      lam = es.eigenvalues();
    };
    decompose(nx, hx, params.length_x, qx_, lx_);
    decompose(ny, hy, params.length_y, qy_, ly_);

    // Escalate jitter by 10x, up to 1e-4 sigma^2, until every factor entry is positive.
    const Eigen::MatrixXd products = params.variance * lx_ * ly_.transpose();
    const double cap = 1e-4 * params.variance;
    double j = jitter;
    while (!(products.minCoeff() + j > 0.0)) {
      if (j >= cap) throw Error(ErrorKind::ill_conditioned_covariance, "covariance not positive definite after jitter escalation");
      j = (j > 0.0) ? std::min(j * 10.0, cap) : default_relative_jitter * params.variance;
    }
    jitter_ = j;
    scale_.resize(nx, ny);
    for (int b = 0; b < ny; ++b)
      for (int a = 0; a < nx; ++a) scale_(a, b) = std::sqrt(params.variance * lx_[a] * ly_[b] + jitter_);
  }

  int nx() const noexcept { return nx_; }
  int ny() const noexcept { return ny_; }
  int dimension() const noexcept { return nx_ * ny_; }
  const KernelParams& params() const noexcept { return params_; }
  double jitter() const noexcept { return jitter_; }

  /// Covariance entry between cells a and b (jitter included on the diagonal).
  double covariance(int a, int b) const {
    const int ia = a % nx_, ja = a / nx_, ib = b % nx_, jb = b / nx_;
    const Point pa((ia + 0.5) * hx_, (ja + 0.5) * hy_);
    const Point pb((ib + 0.5) * hx_, (jb + 0.5) * hy_);
    return params_(pa, pb) + (a == b ? jitter_ : 0.0);
  }

  /// xi = L z.
  Eigen::VectorXd apply_factor(const Eigen::VectorXd& z) const {
    check(z);
    const Eigen::Map<const Eigen::MatrixXd> zm(z.data(), nx_, ny_);
    Eigen::VectorXd out(dimension());
    Eigen::Map<Eigen::MatrixXd> om(out.data(), nx_, ny_);
    om.noalias() = qx_ * (scale_.cwiseProduct(zm)) * qy_.transpose();
    return out;
  }

  /// L^{-1} xi; its squared norm is ||xi||^2_Sigma.
  Eigen::VectorXd whiten(const Eigen::VectorXd& xi) const {
    check(xi);
    const Eigen::Map<const Eigen::MatrixXd> xm(xi.data(), nx_, ny_);
    Eigen::VectorXd out(dimension());
    Eigen::Map<Eigen::MatrixXd> om(out.data(), nx_, ny_);
    om.noalias() = qx_.transpose() * xm * qy_;
    om.array() /= scale_.array();
    return out;
  }

  double squared_norm(const Eigen::VectorXd& xi) const { return whiten(xi).squaredNorm(); }

  /// Dense covariance, for small grids and tests.
  Eigen::MatrixXd dense_covariance() const {
    Eigen::MatrixXd s(dimension(), dimension());
    for (int a = 0; a < dimension(); ++a)
      for (int b = 0; b < dimension(); ++b) s(a, b) = covariance(a, b);
    return s;
  }

 private:
  void check(const Eigen::VectorXd& v) const {
    if (v.size() != dimension()) throw Error(ErrorKind::invalid_dimension, "vector length != prior dimension");
  }

  int nx_ = 0;
  int ny_ = 0;
  double hx_ = 0.0;
  double hy_ = 0.0;
  KernelParams params_;
  double jitter_ = 0.0;
  Eigen::MatrixXd qx_, qy_;
  Eigen::VectorXd lx_, ly_;
  Eigen::MatrixXd scale_;
};

/// Prior over the cells of `mesh`. A negative jitter selects the default
/// 1e-8 * variance.
inline GaussianPrior build_prior(const FineMesh& mesh, const KernelParams& params, double jitter = -1.0) {
  params.validate();
  const double j = jitter < 0.0 ? GaussianPrior::default_relative_jitter * params.variance : jitter;
  return GaussianPrior(mesh.nx(), mesh.ny(), mesh.hx(), mesh.hy(), params, j);
}

inline Eigen::VectorXd standard_normal(int n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (int k = 0; k < n; ++k) z[k] = normal(rng);
  return z;
}

inline Eigen::VectorXd sample_prior(const GaussianPrior& prior, Rng& rng) {
  return prior.apply_factor(standard_normal(prior.dimension(), rng));
}

/// Cellwise permeability kappa = exp(xi).
inline Eigen::VectorXd field_from_xi(const FineMesh& mesh, const Eigen::VectorXd& xi) {
  if (xi.size() != mesh.num_cells()) throw Error(ErrorKind::invalid_dimension, "xi length != number of cells");
  return xi.array().exp().matrix();
}

}  // namespace vsms
