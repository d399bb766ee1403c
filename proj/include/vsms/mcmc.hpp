#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "vsms/coarse.hpp"
#include "vsms/error.hpp"
#include "vsms/io.hpp"
#include "vsms/random_field.hpp"

namespace vsms {

/// Smoothed total variation on the cell grid,
///   R = lambda * sum_cells sqrt(Dx^2 + Dy^2 + eps^2) hx hy,
/// with forward differences (zero across the last column / row). Applied to
/// xi = log kappa by default or to kappa itself.
struct TvPenalty {
  double lambda = 0.0;
  double epsilon = 1e-3;
  bool on_log_field = true;

  void validate() const {
    if (!(lambda >= 0.0)) throw Error(ErrorKind::invalid_coefficient, "TV weight must be non-negative");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::invalid_coefficient, "TV smoothing must be positive");
  }

  double operator()(int nx, int ny, double hx, double hy, const Eigen::VectorXd& xi) const {
    if (xi.size() != static_cast<Eigen::Index>(nx) * ny) throw Error(ErrorKind::invalid_dimension, "xi length != cells");
    if (lambda == 0.0) return 0.0;
    const auto m = [&](int i, int j) { return on_log_field ? xi[j * nx + i] : std::exp(xi[j * nx + i]); };
    double sum = 0.0;
    const double e2 = epsilon * epsilon;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const double c = m(i, j);
        const double dx = i + 1 < nx ? (m(i + 1, j) - c) / hx : 0.0;
        const double dy = j + 1 < ny ? (m(i, j + 1) - c) / hy : 0.0;
        sum += std::sqrt(dx * dx + dy * dy + e2);
      }
    }
    return lambda * sum * hx * hy;
  }
};

inline double tv_penalty(const FineMesh& mesh, const Eigen::VectorXd& xi, double lambda, double epsilon = 1e-3) {
  return TvPenalty{lambda, epsilon, true}(mesh.nx(), mesh.ny(), mesh.hx(), mesh.hy(), xi);
}

/// Phi(xi) = |d - G(xi)|^2 / (2 sigma^2) + R(xi). The Gaussian term of the
/// prior is the pCN reference measure and is not part of Phi.
class TGPosterior {
 public:
  TGPosterior(ForwardMap forward, Eigen::VectorXd data, double sigma, TvPenalty tv, const FineMesh& mesh)
      : forward_(std::move(forward)), data_(std::move(data)), sigma_(sigma), tv_(tv), nx_(mesh.nx()), ny_(mesh.ny()),
        hx_(mesh.hx()), hy_(mesh.hy()) {
    if (!(sigma > 0.0)) throw Error(ErrorKind::invalid_coefficient, "noise level must be positive");
    tv_.validate();
  }

  double misfit(const Eigen::VectorXd& xi) const {
    const Eigen::VectorXd g = forward_(xi);
    if (g.size() != data_.size()) throw Error(ErrorKind::invalid_dimension, "forward output length != data length");
    return (data_ - g).squaredNorm() / (2.0 * sigma_ * sigma_);
  }
  double penalty(const Eigen::VectorXd& xi) const { return tv_(nx_, ny_, hx_, hy_, xi); }
  double potential(const Eigen::VectorXd& xi) const { return misfit(xi) + penalty(xi); }

  const Eigen::VectorXd& data() const noexcept { return data_; }
  double sigma() const noexcept { return sigma_; }
  const TvPenalty& tv() const noexcept { return tv_; }
  const ForwardMap& forward() const noexcept { return forward_; }

 private:
  ForwardMap forward_;
  Eigen::VectorXd data_;
  double sigma_;
  TvPenalty tv_;
  int nx_, ny_;
  double hx_, hy_;
};

using PotentialFn = std::function<double(const Eigen::VectorXd&)>;

struct ChainOptions {
  long steps = 1000;
  double beta = 0.015;
  double burn_in_fraction = 0.5;
  int thin = 1;                 // keep every thin-th post-burn-in state for quantiles
  long checkpoint_every = 0;    // 0: no checkpoints
  std::filesystem::path checkpoint_path;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps < 1) throw Error(ErrorKind::config, "chain.steps must be positive");
    if (!(beta > 0.0 && beta <= 1.0)) throw Error(ErrorKind::config, "chain.beta must lie in (0, 1]");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) throw Error(ErrorKind::config, "chain.burn_in must lie in [0, 1)");
    if (thin < 1) throw Error(ErrorKind::config, "chain.thin must be positive");
    if (checkpoint_every < 0) throw Error(ErrorKind::config, "chain.checkpoint_every must be non-negative");
    if (checkpoint_every > 0 && checkpoint_path.empty()) throw Error(ErrorKind::config, "checkpoint path required");
  }
  long burn_in() const noexcept { return static_cast<long>(std::floor(burn_in_fraction * static_cast<double>(steps))); }
};

/// Full sampler state; everything needed for a bit-exact resume.
struct Chain {
  long step = 0;
  long accepted = 0;
  Eigen::VectorXd current;
  double current_potential = 0.0;
  std::vector<double> potential_trace;  // Phi after each step
  std::vector<char> accept_trace;
  // Welford accumulators over post-burn-in states.
  long kept = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;
  std::vector<Eigen::VectorXd> stored;  // thinned post-burn-in states
  std::vector<long> stored_step;
  Eigen::VectorXd map_state;
  double map_value = std::numeric_limits<double>::infinity();  // Phi + |xi|_Sigma^2 / 2
  Rng rng;

  double acceptance_rate() const noexcept { return step > 0 ? static_cast<double>(accepted) / static_cast<double>(step) : 0.0; }
};

/// One pCN move: xi' = sqrt(1 - beta^2) xi + beta w, w ~ N(0, Sigma); accepted
/// with probability min(1, exp(Phi(xi) - Phi(xi'))).
inline bool pcn_step(const PotentialFn& potential, const GaussianPrior& prior, double beta, Eigen::VectorXd& xi,
                     double& phi, Rng& rng) {
  const Eigen::VectorXd w = sample_prior(prior, rng);
  Eigen::VectorXd proposal = std::sqrt(1.0 - beta * beta) * xi + beta * w;
  const double phi_new = potential(proposal);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  if (std::isfinite(phi_new) && std::log(u) < phi - phi_new) {
    xi = std::move(proposal);
    phi = phi_new;
    return true;
  }
  return false;
}

inline void save_checkpoint(const std::filesystem::path& path, const Chain& chain, const ChainOptions& opt);
inline Chain load_checkpoint(const std::filesystem::path& path, const ChainOptions& opt);

inline Chain start_chain(const PotentialFn& potential, const GaussianPrior& prior, const Eigen::VectorXd& start,
                         const ChainOptions& opt) {
  opt.validate();
  if (start.size() != prior.dimension()) throw Error(ErrorKind::invalid_dimension, "start state length != prior dimension");
  Chain c;
  c.rng.seed(opt.seed);
  c.current = start;
  c.current_potential = potential(start);
  if (!std::isfinite(c.current_potential)) throw Error(ErrorKind::invalid_coefficient, "potential is not finite at the start state");
  c.mean = Eigen::VectorXd::Zero(start.size());
  c.m2 = Eigen::VectorXd::Zero(start.size());
  c.map_state = start;
  c.map_value = c.current_potential + 0.5 * prior.squared_norm(start);
  c.potential_trace.reserve(static_cast<std::size_t>(opt.steps));
  c.accept_trace.reserve(static_cast<std::size_t>(opt.steps));
  return c;
}

/// Advances the chain to opt.steps (or to `stop_at` when positive), writing
/// checkpoints every opt.checkpoint_every steps and at the end when enabled.
inline void advance_chain(Chain& c, const PotentialFn& potential, const GaussianPrior& prior, const ChainOptions& opt,
                          long stop_at = -1) {
  opt.validate();
  const long burn = opt.burn_in();
  const long last = stop_at > 0 ? std::min(stop_at, opt.steps) : opt.steps;
  while (c.step < last) {
    const bool acc = pcn_step(potential, prior, opt.beta, c.current, c.current_potential, c.rng);
    ++c.step;
    c.accepted += acc ? 1 : 0;
    c.potential_trace.push_back(c.current_potential);
    c.accept_trace.push_back(acc ? 1 : 0);
    if (acc) {
      const double v = c.current_potential + 0.5 * prior.squared_norm(c.current);
      if (v < c.map_value) {
        c.map_value = v;
        c.map_state = c.current;
      }
    }
    if (c.step > burn) {
      ++c.kept;
      const Eigen::VectorXd delta = c.current - c.mean;
      c.mean += delta / static_cast<double>(c.kept);
      c.m2.array() += delta.array() * (c.current - c.mean).array();
      if ((c.step - burn - 1) % opt.thin == 0) {
        c.stored.push_back(c.current);
        c.stored_step.push_back(c.step);
      }
    }
    if (opt.checkpoint_every > 0 && (c.step % opt.checkpoint_every == 0 || c.step == opt.steps))
      save_checkpoint(opt.checkpoint_path, c, opt);
  }
}

inline Chain run_chain(const PotentialFn& potential, const GaussianPrior& prior, const Eigen::VectorXd& start,
                       const ChainOptions& opt) {
  Chain c = start_chain(potential, prior, start, opt);
  advance_chain(c, potential, prior, opt);
  return c;
}

/// Continues a checkpointed chain to opt.steps.
inline Chain resume_chain(const std::filesystem::path& path, const PotentialFn& potential, const GaussianPrior& prior,
                          const ChainOptions& opt) {
  Chain c = load_checkpoint(path, opt);
  if (c.current.size() != prior.dimension()) throw Error(ErrorKind::checkpoint, "checkpoint dimension != prior dimension");
  advance_chain(c, potential, prior, opt);
  return c;
}

inline constexpr char checkpoint_magic[8] = {'V', 'S', 'M', 'S', 'C', 'H', 'K', '1'};

inline void save_checkpoint(const std::filesystem::path& path, const Chain& c, const ChainOptions& opt) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    auto os = io::open_out(tmp, true);
    os.write(checkpoint_magic, sizeof(checkpoint_magic));
    std::ostringstream rng_state;
    rng_state << c.rng;
    nlohmann::json h = {{"format", "vsms-chain-checkpoint"},
                        {"version", 1},
                        {"step", c.step},
                        {"accepted", c.accepted},
                        {"kept", c.kept},
                        {"dimension", c.current.size()},
                        {"stored", c.stored.size()},
                        {"steps", opt.steps},
                        {"beta", opt.beta},
                        {"burn_in_fraction", opt.burn_in_fraction},
                        {"thin", opt.thin},
                        {"seed", opt.seed},
                        {"rng", rng_state.str()}};
    io::write_string(os, h.dump());
    io::write_pod(os, c.current_potential);
    io::write_pod(os, c.map_value);
    io::write_vector(os, c.current);
    io::write_vector(os, c.mean);
    io::write_vector(os, c.m2);
    io::write_vector(os, c.map_state);
    io::write_vector(os, Eigen::Map<const Eigen::VectorXd>(c.potential_trace.data(), static_cast<Eigen::Index>(c.potential_trace.size())));
    io::write_string(os, std::string(c.accept_trace.begin(), c.accept_trace.end()));
    for (std::size_t k = 0; k < c.stored.size(); ++k) {
      io::write_pod<std::int64_t>(os, c.stored_step[k]);
      io::write_vector(os, c.stored[k]);
    }
    if (!os) throw Error(ErrorKind::checkpoint, "failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::checkpoint, "cannot move checkpoint into place: " + ec.message());
}

inline Chain load_checkpoint(const std::filesystem::path& path, const ChainOptions& opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::checkpoint, "cannot open checkpoint " + path.string());
  try {
    char tag[8];
    is.read(tag, sizeof(tag));
    if (!is || std::string(tag, 8) != std::string(checkpoint_magic, 8)) throw Error(ErrorKind::checkpoint, "not a chain checkpoint");
    const nlohmann::json h = nlohmann::json::parse(io::read_string(is));
    if (h.at("beta").get<double>() != opt.beta || h.at("thin").get<int>() != opt.thin ||
        h.at("burn_in_fraction").get<double>() != opt.burn_in_fraction || h.at("seed").get<std::uint64_t>() != opt.seed ||
        h.at("steps").get<long>() != opt.steps)
      throw Error(ErrorKind::checkpoint, "checkpoint was written with different chain options");
    Chain c;
    c.step = h.at("step");
    c.accepted = h.at("accepted");
    c.kept = h.at("kept");
    std::istringstream rs(h.at("rng").get<std::string>());
    rs >> c.rng;
    if (!rs) throw Error(ErrorKind::checkpoint, "corrupt generator state");
    c.current_potential = io::read_pod<double>(is);
    c.map_value = io::read_pod<double>(is);
    c.current = io::read_vector(is);
    c.mean = io::read_vector(is);
    c.m2 = io::read_vector(is);
    c.map_state = io::read_vector(is);
    const Eigen::VectorXd trace = io::read_vector(is);
    c.potential_trace.assign(trace.data(), trace.data() + trace.size());
    const std::string acc = io::read_string(is);
    c.accept_trace.assign(acc.begin(), acc.end());
    const auto stored = h.at("stored").get<std::size_t>();
    for (std::size_t k = 0; k < stored; ++k) {
      c.stored_step.push_back(io::read_pod<std::int64_t>(is));
      c.stored.push_back(io::read_vector(is));
    }
    if (static_cast<long>(c.potential_trace.size()) != c.step || static_cast<long>(c.accept_trace.size()) != c.step ||
        c.current.size() != h.at("dimension").get<Eigen::Index>())
      throw Error(ErrorKind::checkpoint, "checkpoint arrays are inconsistent");
    c.potential_trace.reserve(static_cast<std::size_t>(opt.steps));
    c.accept_trace.reserve(static_cast<std::size_t>(opt.steps));
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::checkpoint, std::string("checkpoint header: ") + ex.what());
  } catch (const Error& ex) {
    if (ex.kind() == ErrorKind::checkpoint) throw;
    throw Error(ErrorKind::checkpoint, ex.what());
  }
}

struct PosteriorStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_dev;
  std::vector<double> levels;
  std::vector<Eigen::VectorXd> quantiles;  // one field per level, from stored states
  Eigen::VectorXd map_state;
  double acceptance_rate = 0.0;
  long kept = 0;
};

/// Type-7 (linear interpolation) empirical quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw Error(ErrorKind::insufficient_samples, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Columnwise quantiles of a sample stored as one vector per draw.
inline std::vector<Eigen::VectorXd> sample_quantiles(const std::vector<Eigen::VectorXd>& draws, const std::vector<double>& levels) {
  if (draws.empty()) throw Error(ErrorKind::insufficient_samples, "no draws");
  const Eigen::Index n = draws.front().size();
  std::vector<Eigen::VectorXd> out(levels.size(), Eigen::VectorXd(n));
  std::vector<double> col(draws.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < draws.size(); ++s) col[s] = draws[s][i];
    std::sort(col.begin(), col.end());
    for (std::size_t l = 0; l < levels.size(); ++l) out[l][i] = sorted_quantile(col, levels[l]);
  }
  return out;
}

inline PosteriorStats posterior_stats(const Chain& c, const std::vector<double>& levels = {0.025, 0.25, 0.5, 0.75, 0.95, 0.975}) {
  if (c.kept < 1 || c.stored.empty()) throw Error(ErrorKind::insufficient_samples, "no post-burn-in states");
  PosteriorStats s;
  s.mean = c.mean;
  s.std_dev = Eigen::VectorXd::Zero(c.mean.size());
  if (c.kept > 1) s.std_dev = (c.m2 / static_cast<double>(c.kept - 1)).cwiseMax(0.0).cwiseSqrt();
  s.levels = levels;
  s.quantiles = sample_quantiles(c.stored, levels);
  s.map_state = c.map_state;
  s.acceptance_rate = c.acceptance_rate();
  s.kept = c.kept;
  return s;
}

/// Pointwise bands of a scalar response over the stored states:
/// credible = quantiles of the response, predictive = quantiles of the
/// response plus N(0, sigma^2) noise (one noise draw per state and point).
struct Bands {
  Eigen::VectorXd lower, median, upper;
  Eigen::VectorXd predictive_lower, predictive_upper;
};

inline Bands predict_intervals(const std::vector<Eigen::VectorXd>& responses, double sigma, double level, Rng& rng) {
  if (responses.empty()) throw Error(ErrorKind::insufficient_samples, "no responses");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::invalid_coefficient, "band level must lie in (0, 1)");
  const double a = 0.5 * (1.0 - level);
  const auto q = sample_quantiles(responses, {a, 0.5, 1.0 - a});
  std::vector<Eigen::VectorXd> noisy;
  noisy.reserve(responses.size());
  for (const auto& r : responses) noisy.push_back(r + sigma * standard_normal(static_cast<int>(r.size()), rng));
  const auto pq = sample_quantiles(noisy, {a, 1.0 - a});
  return {q[0], q[1], q[2], pq[0], pq[1]};
}

}  // namespace vsms
