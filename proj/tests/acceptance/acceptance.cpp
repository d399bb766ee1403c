// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Configurations come from the repository's configs/ directory so the suite
// runs exactly what the CLI would run. Tolerances are fixed below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vsms/vsms.hpp"

namespace fs = std::filesystem;
using namespace vsms;

namespace {

// Reference eps_2 for M = 3, 5, 7 and the accepted band around them.
constexpr double m_sweep_reference[3] = {2.52e-4, 1.46e-4, 8.37e-5};
constexpr double m_sweep_band = 10.0;
constexpr double m_sweep_eps_inf_max = 1e-2;
constexpr double m_sweep_minutes = 30.0;
constexpr double n_sweep_spread = 0.10;
constexpr int timing_evaluations = 100;  // per repeat; at least 50 required
constexpr int timing_repeats = 3;
constexpr double interpolation_tol = 1e-10;
constexpr double decomposition_tol = 1e-10;
constexpr int invariance_grid = 10;
constexpr long invariance_steps = 10000;
constexpr double invariance_beta = 0.5;
constexpr std::uint64_t invariance_seed = 20240601;
constexpr int invariance_batches = 50;
constexpr double invariance_z = 3.0;
constexpr double kl_ratio_growth_max = 1.5;  // fitted growth of KL / L2 per unit M
constexpr double kl_minutes = 120.0;
constexpr long two_disk_steps = 20000;
constexpr int two_disk_components = 2;
constexpr double two_disk_acceptance_lo = 0.25;
constexpr double two_disk_acceptance_hi = 0.50;
constexpr int misfit_replicates = 50;
constexpr double misfit_lo = 0.4;
constexpr double misfit_hi = 0.6;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path configs;
  int threads = 1;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string list(const std::vector<double>& v, const char* f = "%.3e") {
  std::string s = "[";
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + fmt(f, v[k]);
  return s + "]";
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] < v[k - 1])) return false;
  return true;
}

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] > v[k - 1])) return false;
  return true;
}

StochasticBasisLibrary library(const RunConfig& c, const Setup& s, int m, int terms) {
  LibraryConfig lc = c.library();
  lc.basis_per_neighborhood = m;
  lc.max_terms = terms;
  return obtain_library(lc, s);
}

/// Smallest mean construction time over repeats, each on fresh samples.
double best_time(const BasisBuilder& builder, BasisMethod method, const GaussianPrior& prior, std::uint64_t seed) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < timing_repeats; ++r) {
    Rng rng(seed + static_cast<std::uint64_t>(r));
    best = std::min(best, time_basis(builder, method, prior, timing_evaluations, rng));
  }
  return best;
}

/// Shared no-flow forward setup of the M and N sweeps.
struct TableRig {
  RunConfig cfg;
  Setup setup;
  ForwardSpec spec;
  FineSolver fine;
  CoarseSolver coarse;

  explicit TableRig(const fs::path& path)
      : cfg(RunConfig::load(path)),
        setup(cfg),
        spec(cfg.forward_spec(setup.mesh, cfg.forward.dt)),
        fine(setup.mesh, spec.problem.dirichlet.has_value()),
        coarse(setup.mesh, spec.problem) {}

  ForwardErrors errors(const StochasticBasisLibrary& lib, int m, int threads) const {
    BasisBuilder b(setup.mesh, setup.grid, spec.problem.dirichlet.has_value(), m);
    b.attach_library(&lib);
    Rng rng(cfg.diagnose.seed);
    return forward_errors(fine, coarse, b, BasisMethod::vs, setup.prior, cfg.diagnose.samples, rng, threads);
  }
};

Verdict m_sweep(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const TableRig rig(o.configs / "m_sweep.json");
  const std::vector<int> ms{3, 5, 7};
  std::vector<double> e2, einf;
  for (int m : ms) {
    const StochasticBasisLibrary lib = library(rig.cfg, rig.setup, m, rig.cfg.basis.terms);
    const ForwardErrors e = rig.errors(lib, m, o.threads);
    e2.push_back(e.eps_2);
    einf.push_back(e.eps_inf);
  }
  const double minutes = seconds_since(t0) / 60.0;
  bool within = true;
  for (std::size_t k = 0; k < ms.size(); ++k)
    within = within && e2[k] >= m_sweep_reference[k] / m_sweep_band && e2[k] <= m_sweep_reference[k] * m_sweep_band;
  bool bounded = true;
  for (double v : einf) bounded = bounded && v < m_sweep_eps_inf_max;
  const bool pass = within && strictly_decreasing(e2) && bounded && minutes < m_sweep_minutes;
  return {pass, "eps_2 " + list(e2) + " eps_inf " + list(einf) + " over " + std::to_string(rig.cfg.diagnose.samples) +
                    " samples, " + fmt("%.1f", minutes) + " min"};
}

Verdict n_sweep(const Options& o) {
  const TableRig rig(o.configs / "n_sweep.json");
  const int m = rig.cfg.diagnose.n_sweep_m;
  const bool dirichlet = rig.spec.problem.dirichlet.has_value();
  std::vector<double> e2, tau;
  for (int n : rig.cfg.diagnose.n_sweep) {
    const StochasticBasisLibrary lib = library(rig.cfg, rig.setup, m, n);
    e2.push_back(rig.errors(lib, m, o.threads).eps_2);
    BasisBuilder b(rig.setup.mesh, rig.setup.grid, dirichlet, m);
    b.attach_library(&lib);
    tau.push_back(best_time(b, BasisMethod::vs, rig.setup.prior, rig.cfg.diagnose.seed + 1));
  }
  BasisBuilder direct(rig.setup.mesh, rig.setup.grid, dirichlet, m);
  direct.compute_reference_traces();
  const double tau_direct = best_time(direct, BasisMethod::direct_lift, rig.setup.prior, rig.cfg.diagnose.seed + 1);
  const double lo = *std::min_element(e2.begin(), e2.end());
  const double hi = *std::max_element(e2.begin(), e2.end());
  const double spread = (hi - lo) / lo;
  const bool pass = spread < n_sweep_spread && strictly_increasing(tau) && tau.back() < tau_direct;
  return {pass, "eps_2 " + list(e2) + " spread " + fmt("%.3f", spread) + " tau_vs " + list(tau) + " tau_direct " +
                    fmt("%.3e", tau_direct)};
}

Verdict timing(const Options& o) {
  const TableRig rig(o.configs / "m_sweep.json");
  const int m = 3;
  const bool dirichlet = rig.spec.problem.dirichlet.has_value();
  const StochasticBasisLibrary lib = library(rig.cfg, rig.setup, m, rig.cfg.basis.terms);
  BasisBuilder vs(rig.setup.mesh, rig.setup.grid, dirichlet, m);
  vs.attach_library(&lib);
  BasisBuilder direct(rig.setup.mesh, rig.setup.grid, dirichlet, m);
  direct.compute_reference_traces();
  const BasisBuilder gms(rig.setup.mesh, rig.setup.grid, dirichlet, m);
  const std::uint64_t seed = rig.cfg.diagnose.seed + 1;
  const double t_vs = best_time(vs, BasisMethod::vs, rig.setup.prior, seed);
  const double t_direct = best_time(direct, BasisMethod::direct_lift, rig.setup.prior, seed);
  const double t_gms = best_time(gms, BasisMethod::gmsfem, rig.setup.prior, seed);
  return {t_vs < t_direct && t_direct < t_gms,
          "tau_vs " + fmt("%.3e", t_vs) + " tau_direct " + fmt("%.3e", t_direct) + " tau_gmsfem " + fmt("%.3e", t_gms) + " (" +
              std::to_string(timing_evaluations) + " evaluations, best of " + std::to_string(timing_repeats) + ")"};
}

/// V-norm (unit-coefficient energy) of a zero-trace field, and the H1 norm used
/// to scale it. The first effective function is close to a constant, so its own
/// energy is nearly zero and would make a meaningless denominator.
struct PatchNorms {
  SparseMatrix stiffness;
  SparseMatrix mass;

  explicit PatchNorms(const LocalProblem& p)
      : stiffness(p.assemble(Eigen::VectorXd::Ones(p.num_pieces()))),
        mass(assemble_mass(p.patch(), Eigen::VectorXd::Ones(p.num_pieces()))) {}

  double v(const Eigen::VectorXd& w) const { return std::sqrt(std::max(0.0, w.dot(stiffness * w))); }
  double h1(const Eigen::VectorXd& w) const { return std::sqrt(std::max(0.0, w.dot(stiffness * w) + w.dot(mass * w))); }
};

Verdict interpolation(const Options& o) {
  const RunConfig cfg = RunConfig::load(o.configs / "m_sweep.json");
  const Setup s(cfg);
  const StochasticBasisLibrary lib = library(cfg, s, cfg.basis.per_neighborhood, cfg.basis.terms);
  double worst = 0.0;
  int checked = 0;
  for (Template t : all_templates) {
    const TemplateEntry& e = lib.entry(t);
    const LocalProblem problem(s.grid.template_patch(t));
    const PatchNorms norms(problem);
    Eigen::MatrixXd traces(e.boundary.traces.rows(), e.num_basis() + 1);
    traces.leftCols(e.num_basis()) = e.boundary.traces;
    traces.col(e.num_basis()) = e.boundary.traces.rowwise().sum();
    for (const Eigen::VectorXd& xi : e.selected_xi) {
      const Eigen::VectorXd kappa = xi.array().exp().matrix();
      const Eigen::MatrixXd direct = problem.harmonic_extension(kappa, traces);
      Eigen::MatrixXd separated(direct.rows(), direct.cols());
      separated.leftCols(e.num_basis()) = e.evaluate(kappa);
      separated.col(e.num_basis()) = e.rep.eval_solution(kappa);
      for (Eigen::Index j = 0; j < direct.cols(); ++j) {
        worst = std::max(worst, norms.v(separated.col(j) - direct.col(j)) / norms.h1(direct.col(j)));
        ++checked;
      }
    }
  }
  return {worst < interpolation_tol,
          "max relative V-norm error " + fmt("%.2e", worst) + " over " + std::to_string(checked) + " (template, sample, field) triples"};
}

Verdict decomposition(const Options& o) {
  const RunConfig cfg = RunConfig::load(o.configs / "m_sweep.json");
  const Setup s(cfg);
  double worst = 0.0, scale = 0.0;
  for (int m : {3, 5, 7}) {
    const StochasticBasisLibrary lib = library(cfg, s, m, cfg.basis.terms);
    for (Template t : all_templates) {
      const TemplateEntry& e = lib.entry(t);
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(e.rep.modes().rows(), e.rep.modes().cols());
      for (const auto& p : e.physical_modes) sum += p;
      worst = std::max(worst, (sum - e.rep.modes()).cwiseAbs().maxCoeff());
      scale = std::max(scale, e.rep.modes().cwiseAbs().maxCoeff());
    }
  }
  return {worst < decomposition_tol,
          "max |sum_j Phi_jq - Phi_q| " + fmt("%.2e", worst) + " (largest |Phi_q| entry " + fmt("%.2e", scale) + ")"};
}

Verdict invariance(const Options&) {
  const FineMesh mesh = build_fine_mesh(invariance_grid, invariance_grid);
  const GaussianPrior prior = build_prior(mesh, KernelParams{});
  ChainOptions opt;
  opt.steps = invariance_steps;
  opt.beta = invariance_beta;
  opt.burn_in_fraction = 0.0;
  opt.thin = 1;
  opt.seed = invariance_seed;
  // Start from a prior draw so the chain is stationary from step one.
  Rng start_rng(invariance_seed + 1);
  const Chain chain = run_chain([](const Eigen::VectorXd&) { return 0.0; }, prior, sample_prior(prior, start_rng), opt);
  const int d = prior.dimension();
  int failures = 0;
  double worst = 0.0;
  std::vector<double> x(chain.stored.size()), x2(chain.stored.size());
  for (int i = 0; i < d; ++i) {
    const double var = prior.covariance(i, i);
    for (std::size_t k = 0; k < chain.stored.size(); ++k) {
      x[k] = chain.stored[k][i];
      x2[k] = x[k] * x[k];
    }
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    const double second = std::accumulate(x2.begin(), x2.end(), 0.0) / static_cast<double>(x2.size());
    const double z_mean = std::abs(mean) / batch_means_se(x, invariance_batches);
    const double z_var = std::abs(second - var) / batch_means_se(x2, invariance_batches);
    worst = std::max({worst, z_mean, z_var});
    failures += (z_mean > invariance_z) + (z_var > invariance_z);
  }
  return {failures == 0, std::to_string(failures) + " of " + std::to_string(2 * d) + " moments beyond " + fmt("%.0f", invariance_z) +
                             " SE, largest |z| " + fmt("%.2f", worst) + ", acceptance " + fmt("%.3f", chain.acceptance_rate())};
}

Verdict kl_trend(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig c = RunConfig::load(o.configs / "kl_reduced.json");
  const auto& d = c.diagnose;
  const Setup s(c);
  const ForwardSpec spec = c.forward_spec(s.mesh, c.forward.dt);
  const SyntheticData data = synthetic_data(c, s.mesh);
  const FineForward gf(s.mesh, spec);
  const ForwardMap fine = [&](const Eigen::VectorXd& x) { return gf(x); };
  ChainOptions opt = c.chain.options;
  opt.steps = d.kl_steps;
  std::vector<double> l2, kl, ratio;
  bool reliable = true;
  for (int m : d.kl_sweep) {
    const StochasticBasisLibrary lib = library(c, s, m, c.basis.terms);
    CoarseForward g(s.mesh, s.grid, spec, m, BasisMethod::vs);
    g.attach_library(&lib);
    Rng rng(d.seed);
    const KlPoint p = kl_point(fine, [&](const Eigen::VectorXd& x) { return g(x); }, s.prior, s.mesh, data.noisy, c.data.sigma,
                               c.chain.tv, opt, d.kl_draws, d.kl_mc, rng, o.threads);
    reliable = reliable && p.kl_reliable;
    l2.push_back(p.l2.value);
    kl.push_back(p.kl.value);
    ratio.push_back(p.kl.value / p.l2.value);
  }
  // Least-squares slope of log(ratio) against M.
  const double n = static_cast<double>(d.kl_sweep.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < d.kl_sweep.size(); ++k) {
    mx += d.kl_sweep[k] / n;
    my += std::log(std::max(ratio[k], 1e-300)) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < d.kl_sweep.size(); ++k) {
    sxy += (d.kl_sweep[k] - mx) * (std::log(std::max(ratio[k], 1e-300)) - my);
    sxx += (d.kl_sweep[k] - mx) * (d.kl_sweep[k] - mx);
  }
  const double growth = std::exp(sxy / sxx);
  const double minutes = seconds_since(t0) / 60.0;
  const bool pass = reliable && strictly_decreasing(l2) && strictly_decreasing(kl) && growth < kl_ratio_growth_max &&
                    minutes < kl_minutes;
  return {pass, "L2 " + list(l2) + " KL " + list(kl) + " ratio growth per M " + fmt("%.2f", growth) +
                    (reliable ? "" : " (unreliable KL weights)") + ", " + fmt("%.1f", minutes) + " min"};
}

Verdict two_disks(const Options& o) {
  RunConfig c = RunConfig::load(o.configs / "two_disks.json");
  c.chain.options.steps = two_disk_steps;
  c.chain.options.checkpoint_every = 0;
  const Setup s(c);
  const SyntheticData data = synthetic_data(c, s.mesh);
  const StochasticBasisLibrary lib = library(c, s, c.basis.per_neighborhood, c.basis.terms);
  CoarseForward g(s.mesh, s.grid, c.forward_spec(s.mesh, c.forward.dt), c.basis.per_neighborhood, BasisMethod::vs);
  g.attach_library(&lib);
  const TGPosterior post([&](const Eigen::VectorXd& x) { return g(x); }, data.noisy, c.data.sigma, c.chain.tv, s.mesh);
  const Chain chain = run_chain([&](const Eigen::VectorXd& x) { return post.potential(x); }, s.prior,
                                Eigen::VectorXd::Zero(s.prior.dimension()), c.chain.options);
  const PosteriorStats st = posterior_stats(chain, {0.5});
  const int comps = count_components(st.mean, s.mesh.nx(), s.mesh.ny(), c.chain.component_threshold);
  const double acc = chain.acceptance_rate();
  return {comps == two_disk_components && acc >= two_disk_acceptance_lo && acc <= two_disk_acceptance_hi,
          std::to_string(comps) + " components above " + fmt("%.1f", c.chain.component_threshold) + ", acceptance " +
              fmt("%.4f", acc) + " over " + std::to_string(two_disk_steps) + " steps"};
}

Verdict misfit(const Options& o) {
  const RunConfig c = RunConfig::load(o.configs / "two_disks.json");
  const Setup s(c);
  const SyntheticData data = synthetic_data(c, s.mesh);
  const Eigen::VectorXd model = FineForward(s.mesh, c.forward_spec(s.mesh, c.data.dt))(data.truth);
  Rng rng(c.data.seed + 1);
  const double v = misfit_per_datum(data.clean, model, c.data.sigma, misfit_replicates, rng);
  return {v >= misfit_lo && v <= misfit_hi, "misfit per datum " + fmt("%.4f", v) + " over " + std::to_string(misfit_replicates) +
                                                " replicates, " + std::to_string(data.clean.size()) + " data"};
}

struct Criterion {
  const char* name;
  std::function<Verdict(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{{"error_decreases_in_m", m_sweep},
                                        {"error_flat_in_n", n_sweep},
                                        {"timing_order", timing},
                                        {"greedy_interpolation", interpolation},
                                        {"ensemble_decomposition", decomposition},
                                        {"pcn_prior_invariance", invariance},
                                        {"kl_l2_trend", kl_trend},
                                        {"two_disk_recovery", two_disks},
                                        {"misfit_calibration", misfit}};

  CLI::App app{"Acceptance criteria"};
  Options o;
  o.configs = fs::path(VSMS_SOURCE_DIR) / "configs";
  o.threads = hardware_threads();
  std::vector<std::string> only;
  app.add_option("--configs", o.configs, "Directory holding the run configurations")->check(CLI::ExistingDirectory);
  app.add_option("--threads", o.threads, "Worker threads for sample loops")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "Run only the named criteria");
  CLI11_PARSE(app, argc, argv);

  const std::set<std::string> wanted(only.begin(), only.end());
  for (const auto& w : wanted) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return w == c.name; })) {
      std::fprintf(stderr, "unknown criterion: %s\n", w.c_str());
      return 2;
    }
  }
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run(o);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s: %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
