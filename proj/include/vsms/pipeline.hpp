#pragma once

#include <algorithm>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "vsms/coarse.hpp"
#include "vsms/config.hpp"
#include "vsms/diagnostics.hpp"
#include "vsms/ensemble.hpp"
#include "vsms/mcmc.hpp"
#include "vsms/parallel.hpp"

namespace vsms {

/// Meshes and prior described by a config.
struct Setup {
  FineMesh mesh;
  CoarseGrid grid;
  GaussianPrior prior;

  explicit Setup(const RunConfig& c)
      : mesh(build_fine_mesh(c.mesh.fine_nx, c.mesh.fine_ny)),
        grid(mesh, c.mesh.coarse_nx, c.mesh.coarse_ny),
        prior(build_prior(mesh, c.kernel, c.relative_jitter * c.kernel.variance)) {}
};

/// Loads `file` when given (rejecting a stale one), otherwise trains.
inline StochasticBasisLibrary obtain_library(const LibraryConfig& cfg, const Setup& s, const std::filesystem::path& file = {}) {
  if (!file.empty()) {
    StochasticBasisLibrary lib = StochasticBasisLibrary::load(file);
    lib.check(make_library_key(s.grid, s.mesh.hx(), s.mesh.hy(), cfg));
    return lib;
  }
  return build_library(s.grid, s.mesh.hx(), s.mesh.hy(), cfg);
}

/// Number of 4-connected cell clusters where `field` exceeds `threshold`.
inline int count_components(const Eigen::VectorXd& field, int nx, int ny, double threshold) {
  if (field.size() != static_cast<Eigen::Index>(nx) * ny) throw Error(ErrorKind::invalid_dimension, "field length != nx * ny");
  std::vector<int> label(static_cast<std::size_t>(field.size()), -1);
  std::vector<int> stack;
  int count = 0;
  for (int seed = 0; seed < field.size(); ++seed) {
    if (field[seed] <= threshold || label[static_cast<std::size_t>(seed)] >= 0) continue;
    label[static_cast<std::size_t>(seed)] = count;
    stack.push_back(seed);
    while (!stack.empty()) {
      const int c = stack.back();
      stack.pop_back();
      const int i = c % nx, j = c / nx;
      const int nb[4][2] = {{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}};
      for (const auto& p : nb) {
        if (p[0] < 0 || p[1] < 0 || p[0] >= nx || p[1] >= ny) continue;
        const int d = p[1] * nx + p[0];
        if (field[d] > threshold && label[static_cast<std::size_t>(d)] < 0) {
          label[static_cast<std::size_t>(d)] = count;
          stack.push_back(d);
        }
      }
    }
    ++count;
  }
  return count;
}

/// |grad f| of a cell field by central differences (one-sided at the edges).
inline Eigen::VectorXd gradient_magnitude(const FineMesh& mesh, const Eigen::VectorXd& f) {
  const int nx = mesh.nx(), ny = mesh.ny();
  if (f.size() != mesh.num_cells()) throw Error(ErrorKind::invalid_dimension, "field length != cells");
  Eigen::VectorXd g(f.size());
  const auto at = [&](int i, int j) { return f[j * nx + i]; };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int il = std::max(i - 1, 0), ir = std::min(i + 1, nx - 1);
      const int jl = std::max(j - 1, 0), jr = std::min(j + 1, ny - 1);
      const double dx = (at(ir, j) - at(il, j)) / ((ir - il) * mesh.hx());
      const double dy = (at(i, jr) - at(i, jl)) / ((jr - jl) * mesh.hy());
      g[j * nx + i] = std::hypot(dx, dy);
    }
  }
  return g;
}

struct SyntheticData {
  Eigen::VectorXd truth;  // log-permeability per cell
  Eigen::VectorXd clean;  // fine forward at data.dt
  Eigen::VectorXd noisy;
};

/// Observations of the configured truth from the fine solver at data.dt,
/// plus N(0, sigma^2) noise seeded by data.seed.
inline SyntheticData synthetic_data(const RunConfig& c, const FineMesh& mesh) {
  if (!c.data.truth) throw Error(ErrorKind::config, "data.truth: required to synthesise observations");
  SyntheticData d;
  d.truth = c.data.truth->on(mesh);
  d.clean = FineForward(mesh, c.forward_spec(mesh, c.data.dt))(d.truth);
  Rng rng(c.data.seed);
  d.noisy = d.clean + c.data.sigma * standard_normal(static_cast<int>(d.clean.size()), rng);
  return d;
}

/// Mean of the data misfit |d - G|^2 / (2 sigma^2 n_d) over fresh noise
/// replicates of d. With G the noise-free model it concentrates at 1/2.
inline double misfit_per_datum(const Eigen::VectorXd& clean, const Eigen::VectorXd& model, double sigma, int replicates, Rng& rng) {
  double sum = 0.0;
  for (int r = 0; r < replicates; ++r) {
    const Eigen::VectorXd d = clean + sigma * standard_normal(static_cast<int>(clean.size()), rng);
    sum += (d - model).squaredNorm() / (2.0 * sigma * sigma * static_cast<double>(d.size()));
  }
  return sum / replicates;
}

struct KlPoint {
  Estimate l2;       // E_{pi0} |G - G_N|^2
  KlEstimate kl;     // D_KL(pi_N || pi)
  double acceptance = 0.0;
  bool kl_reliable = true;
};

/// One point of the KL / L2 sweep. The surrogate posterior is sampled with
/// pCN; the log-ratio Phi - Phi_N at `draws` evenly spaced post-burn-in
/// states feeds kl_estimate. The TV term is common to both and cancels.
inline KlPoint kl_point(const ForwardMap& fine, const ForwardMap& surrogate, const GaussianPrior& prior, const FineMesh& mesh,
                        const Eigen::VectorXd& data, double sigma, const TvPenalty& tv, ChainOptions opt, int draws, int n_mc,
                        Rng& rng, int threads) {
  KlPoint out;
  out.l2 = l2_pi0_error(fine, surrogate, prior, n_mc, rng, threads);
  const TGPosterior post(surrogate, data, sigma, tv, mesh);
  opt.thin = std::max<long>(1, (opt.steps - opt.burn_in()) / draws);
  opt.checkpoint_every = 0;
  const Chain chain = run_chain([&](const Eigen::VectorXd& x) { return post.potential(x); }, prior,
                                Eigen::VectorXd::Zero(prior.dimension()), opt);
  out.acceptance = chain.acceptance_rate();
  const std::size_t n = std::min<std::size_t>(chain.stored.size(), static_cast<std::size_t>(draws));
  std::vector<double> a(n);
  const double s2 = 2.0 * sigma * sigma;
  parallel_for(static_cast<int>(n), threads, [&](int k) {
    const Eigen::VectorXd& xi = chain.stored[chain.stored.size() - n + static_cast<std::size_t>(k)];
    a[static_cast<std::size_t>(k)] = ((data - fine(xi)).squaredNorm() - (data - surrogate(xi)).squaredNorm()) / s2;
  });
  try {
    out.kl = kl_estimate(a, rng);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::unreliable_estimate) throw;
    out.kl_reliable = false;
  }
  return out;
}

}  // namespace vsms
