// vsms: forward runs, basis-library builds, pCN chains and diagnostic sweeps
// driven by one JSON config. Every command writes manifest.json next to its
// outputs.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vsms/vsms.hpp"

namespace fs = std::filesystem;
using namespace vsms;

namespace {

constexpr const char* version = "1.0.0";

struct Context {
  RunConfig cfg;
  fs::path out;
  fs::path library_file;
  int threads = 1;
  std::string command;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  nlohmann::json outputs = nlohmann::json::array();
  nlohmann::json summary = nlohmann::json::object();

  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }
};

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto os = io::open_out(path);
  os << j.dump(2) << '\n';
}

void write_manifest(Context& ctx) {
  const auto& c = ctx.cfg;
  nlohmann::json m;
  m["command"] = ctx.command;
  m["version"] = version;
  m["finished_at"] = timestamp();
  m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
  m["threads"] = ctx.threads;
  m["config_hash"] = StochasticBasisLibrary::hex(c.hash());
  m["config"] = c.source;
  m["seeds"] = {{"basis", c.basis.seed}, {"data", c.data.seed}, {"chain", c.chain.options.seed}, {"diagnose", c.diagnose.seed}};
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["outputs"] = ctx.outputs;
  m["summary"] = ctx.summary;
  write_json(ctx.out / "manifest.json", m);
}

std::string time_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "t_%.6g", t);
  return buf;
}

/// Nodes as rows: node, x, y, then one column per exported time level.
void write_trajectory(const fs::path& path, const FineMesh& mesh, const Trajectory& t, int every) {
  std::vector<int> levels;
  for (int n = 0; n <= t.num_steps(); n += every) levels.push_back(n);
  if (levels.back() != t.num_steps()) levels.push_back(t.num_steps());
  std::vector<std::string> header{"node", "x", "y"};
  for (int n : levels) header.push_back(time_label(n * t.dt));
  Eigen::MatrixXd rows(mesh.num_nodes(), static_cast<Eigen::Index>(header.size()));
  for (int v = 0; v < mesh.num_nodes(); ++v) {
    const Point p = mesh.node_coord(v);
    rows(v, 0) = v;
    rows(v, 1) = p.x();
    rows(v, 2) = p.y();
    for (std::size_t k = 0; k < levels.size(); ++k) rows(v, static_cast<Eigen::Index>(k) + 3) = t.states[static_cast<std::size_t>(levels[k])][v];
  }
  io::write_csv(path, header, rows);
}

/// Time-major observation vectors as rows (time, x, y, columns...).
Eigen::MatrixXd observation_rows(const std::vector<Point>& points, const std::vector<double>& times,
                                 const std::vector<const Eigen::VectorXd*>& columns) {
  const auto np = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd rows(np * static_cast<Eigen::Index>(times.size()), 3 + static_cast<Eigen::Index>(columns.size()));
  for (std::size_t t = 0; t < times.size(); ++t) {
    for (Eigen::Index k = 0; k < np; ++k) {
      const Eigen::Index r = static_cast<Eigen::Index>(t) * np + k;
      rows(r, 0) = times[t];
      rows(r, 1) = points[static_cast<std::size_t>(k)].x();
      rows(r, 2) = points[static_cast<std::size_t>(k)].y();
      for (std::size_t c = 0; c < columns.size(); ++c) rows(r, 3 + static_cast<Eigen::Index>(c)) = (*columns[c])[r];
    }
  }
  return rows;
}

int export_stride(const RunConfig& c, int steps) {
  if (c.forward.export_every > 0) return c.forward.export_every;
  return std::max(1, steps / 20);
}

StochasticBasisLibrary library_for(Context& ctx, const Setup& s, int per_neighborhood, int terms, bool allow_file) {
  LibraryConfig lc = ctx.cfg.library();
  lc.basis_per_neighborhood = per_neighborhood;
  lc.max_terms = terms;
  return obtain_library(lc, s, allow_file ? ctx.library_file : fs::path{});
}

void cmd_forward(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const Setup s(c);
  const Eigen::VectorXd xi = c.data.truth ? c.data.truth->on(s.mesh) : Eigen::VectorXd::Zero(s.mesh.num_cells());
  const ForwardSpec spec = c.forward_spec(s.mesh, c.forward.dt);

  const FineSolver fine(s.mesh, spec.problem.dirichlet.has_value());
  const Trajectory uf = fine.solve(xi, spec.problem);

  CoarseForward sur(s.mesh, s.grid, spec, c.basis.per_neighborhood, c.basis.method);
  std::optional<StochasticBasisLibrary> lib;
  if (c.basis.method == BasisMethod::vs) {
    lib = library_for(ctx, s, c.basis.per_neighborhood, c.basis.terms, true);
    sur.attach_library(&*lib);
  }
  const Trajectory us = sur.solver().solve(sur.builder().build(c.basis.method, xi), xi);

  const int every = export_stride(c, uf.num_steps());
  write_trajectory(ctx.file("trajectory_fine.csv"), s.mesh, uf, every);
  write_trajectory(ctx.file("trajectory_surrogate.csv"), s.mesh, us, every);
  const PointSampler sampler = make_point_sampler(s.mesh, spec.sensors);
  const Eigen::VectorXd df = observe_trajectory(sampler, spec.obs_steps(), uf);
  const Eigen::VectorXd ds = observe_trajectory(sampler, spec.obs_steps(), us);
  io::write_csv(ctx.file("observations.csv"), {"time", "x", "y", "fine", "surrogate"},
                observation_rows(spec.sensors, spec.obs_times, {&df, &ds}));

  ForwardErrorAccumulator acc(fine.mass());
  acc.add(uf, us);
  ctx.summary = {{"method", method_name(c.basis.method)},
                 {"per_neighborhood", c.basis.per_neighborhood},
                 {"steps", uf.num_steps()},
                 {"eps_inf", acc.eps_inf()},
                 {"eps_2", acc.eps_2()},
                 {"max_abs_fine", uf.states.back().cwiseAbs().maxCoeff()},
                 {"observation_rel_error", df.norm() > 0 ? (df - ds).norm() / df.norm() : (df - ds).norm()}};
}

void cmd_build_basis(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const Setup s(c);
  const auto t0 = std::chrono::steady_clock::now();
  const StochasticBasisLibrary lib = build_library(s.grid, s.mesh.hx(), s.mesh.hy(), c.library());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path path = ctx.file("library.vsl");
  lib.save(path);
  write_json(ctx.file("library.json"), lib.header());
  auto is = io::open_in(path, true);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  io::Fnv1a file_hash;
  file_hash.bytes(bytes.data(), bytes.size());
  nlohmann::json terms = nlohmann::json::array();
  for (Template t : all_templates) terms.push_back(lib.entry(t).rep.num_terms());
  ctx.summary = {{"library_hash", StochasticBasisLibrary::hex(lib.hash())},
                 {"file_hash", StochasticBasisLibrary::hex(file_hash.value())},
                 {"per_neighborhood", lib.basis_per_neighborhood()},
                 {"terms_per_template", terms},
                 {"build_seconds", seconds}};
}

void cmd_chain(Context& ctx, bool resume) {
  const RunConfig& c = ctx.cfg;
  const Setup s(c);
  const SyntheticData data = synthetic_data(c, s.mesh);
  const ForwardSpec spec = c.forward_spec(s.mesh, c.forward.dt);
  io::write_csv(ctx.file("data.csv"), {"time", "x", "y", "clean", "observed"},
                observation_rows(spec.sensors, spec.obs_times, {&data.clean, &data.noisy}));

  CoarseForward sur(s.mesh, s.grid, spec, c.basis.per_neighborhood, c.basis.method);
  std::optional<StochasticBasisLibrary> lib;
  if (c.basis.method == BasisMethod::vs) {
    lib = library_for(ctx, s, c.basis.per_neighborhood, c.basis.terms, true);
    sur.attach_library(&*lib);
  }
  const TGPosterior post([&](const Eigen::VectorXd& x) { return sur(x); }, data.noisy, c.data.sigma, c.chain.tv, s.mesh);
  const PotentialFn potential = [&](const Eigen::VectorXd& x) { return post.potential(x); };

  ChainOptions opt = c.chain.options;
  opt.checkpoint_path = ctx.file("chain.chk");
  const auto t0 = std::chrono::steady_clock::now();
  Chain chain = resume && fs::exists(opt.checkpoint_path)
                    ? resume_chain(opt.checkpoint_path, potential, s.prior, opt)
                    : run_chain(potential, s.prior, Eigen::VectorXd::Zero(s.prior.dimension()), opt);
  const double chain_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const PosteriorStats st = posterior_stats(chain, {0.025, 0.25, 0.5, 0.75, 0.975});

  // Cell fields.
  {
    const Eigen::VectorXd gt = gradient_magnitude(s.mesh, data.truth);
    const Eigen::VectorXd gm = gradient_magnitude(s.mesh, st.mean);
    const Eigen::VectorXd gmap = gradient_magnitude(s.mesh, st.map_state);
    const std::vector<std::string> header{"cell", "x", "y", "truth", "mean", "std", "map", "q025", "q25", "q50", "q75", "q975",
                                          "grad_truth", "grad_mean", "grad_map"};
    Eigen::MatrixXd rows(s.mesh.num_cells(), static_cast<Eigen::Index>(header.size()));
    for (int k = 0; k < s.mesh.num_cells(); ++k) {
      const Point p = s.mesh.cell_center(k);
      rows.row(k) << k, p.x(), p.y(), data.truth[k], st.mean[k], st.std_dev[k], st.map_state[k], st.quantiles[0][k],
          st.quantiles[1][k], st.quantiles[2][k], st.quantiles[3][k], st.quantiles[4][k], gt[k], gm[k], gmap[k];
    }
    io::write_csv(ctx.file("fields.csv"), header, rows);
  }
  // Potential and acceptance trace.
  {
    Eigen::MatrixXd rows(chain.step, 3);
    for (long k = 0; k < chain.step; ++k)
      rows.row(k) << k + 1, chain.potential_trace[static_cast<std::size_t>(k)], chain.accept_trace[static_cast<std::size_t>(k)];
    io::write_csv(ctx.file("trace.csv"), {"step", "potential", "accepted"}, rows);
  }
  // Stored draws of selected cells, for histograms and quantile plots.
  if (!c.chain.trace_cells.empty()) {
    std::vector<std::string> header{"step"};
    for (int cell : c.chain.trace_cells) header.push_back("cell_" + std::to_string(cell));
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(chain.stored.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t k = 0; k < chain.stored.size(); ++k) {
      rows(static_cast<Eigen::Index>(k), 0) = static_cast<double>(chain.stored_step[k]);
      for (std::size_t j = 0; j < c.chain.trace_cells.size(); ++j)
        rows(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j) + 1) = chain.stored[k][c.chain.trace_cells[j]];
    }
    io::write_csv(ctx.file("samples.csv"), header, rows);
  }
  // Credible and predictive bands of the response along configured slices.
  nlohmann::json bands = nlohmann::json::array();
  for (const BandSpec& b : c.chain.bands) {
    ForwardSpec bspec = spec;
    bspec.sensors = b.points;
    bspec.obs_times = b.times;
    CoarseForward g(s.mesh, s.grid, bspec, c.basis.per_neighborhood, c.basis.method);
    if (lib) g.attach_library(&*lib);
    ForwardSpec fspec = bspec;
    fspec.problem.dt = c.data.dt;
    const Eigen::VectorXd truth = FineForward(s.mesh, fspec)(data.truth);
    const int n = std::min<int>(c.chain.band_draws, static_cast<int>(chain.stored.size()));
    std::vector<Eigen::VectorXd> responses(static_cast<std::size_t>(n));
    parallel_for(n, ctx.threads, [&](int k) {
      const std::size_t idx = static_cast<std::size_t>(k) * chain.stored.size() / static_cast<std::size_t>(n);
      responses[static_cast<std::size_t>(k)] = g(chain.stored[idx]);
    });
    Rng rng(c.chain.options.seed ^ 0x9e3779b97f4a7c15ULL);
    const Bands q = predict_intervals(responses, c.data.sigma, c.chain.band_level, rng);
    io::write_csv(ctx.file("band_" + b.name + ".csv"),
                  {"time", "x", "y", "truth", "lower", "median", "upper", "pred_lower", "pred_upper"},
                  observation_rows(b.points, b.times, {&truth, &q.lower, &q.median, &q.upper, &q.predictive_lower, &q.predictive_upper}));
    bands.push_back({{"name", b.name}, {"draws", n}, {"level", c.chain.band_level}});
  }

  const double misfit_truth = (data.noisy - sur(data.truth)).squaredNorm() / (2.0 * c.data.sigma * c.data.sigma);
  ctx.summary = {{"steps", chain.step},
                 {"acceptance_rate", chain.acceptance_rate()},
                 {"kept", chain.kept},
                 {"stored", chain.stored.size()},
                 {"final_potential", chain.current_potential},
                 {"map_objective", chain.map_value},
                 {"components_above_threshold", count_components(st.mean, s.mesh.nx(), s.mesh.ny(), c.chain.component_threshold)},
                 {"component_threshold", c.chain.component_threshold},
                 {"surrogate_misfit_per_datum_at_truth", misfit_truth / static_cast<double>(data.noisy.size())},
                 {"chain_seconds", chain_seconds},
                 {"resumed", resume},
                 {"bands", bands}};
}

void cmd_diagnose(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const auto& d = c.diagnose;
  const Setup s(c);
  const ForwardSpec spec = c.forward_spec(s.mesh, c.forward.dt);
  const FineSolver fine(s.mesh, spec.problem.dirichlet.has_value());
  const CoarseSolver coarse(s.mesh, spec.problem);
  const bool dirichlet = spec.problem.dirichlet.has_value();

  struct Row {
    ForwardErrors err;
    double tau = 0.0;
  };
  const auto evaluate = [&](BasisMethod method, int m, const StochasticBasisLibrary* lib) {
    BasisBuilder builder(s.mesh, s.grid, dirichlet, m);
    if (lib) builder.attach_library(lib);
    else if (method == BasisMethod::direct_lift) builder.compute_reference_traces();
    Rng rng(d.seed);
    Row r;
    r.err = forward_errors(fine, coarse, builder, method, s.prior, d.samples, rng, ctx.threads);
    Rng trng(d.seed + 1);
    r.tau = time_basis(builder, method, s.prior, d.timing_evaluations, trng);
    return r;
  };
  const auto headers = [&](std::vector<std::string> h, const std::vector<BasisMethod>& methods) {
    for (BasisMethod m : methods)
      for (const char* q : {"eps_inf_", "eps_2_", "tau_"}) h.push_back(q + std::string(method_name(m)));
    return h;
  };

  nlohmann::json summary;
  if (!d.m_sweep.empty()) {
    const auto header = headers({"per_neighborhood", "terms"}, d.methods);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(d.m_sweep.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t i = 0; i < d.m_sweep.size(); ++i) {
      const int m = d.m_sweep[i];
      std::optional<StochasticBasisLibrary> lib;
      if (std::find(d.methods.begin(), d.methods.end(), BasisMethod::vs) != d.methods.end())
        lib = library_for(ctx, s, m, c.basis.terms, false);
      rows(static_cast<Eigen::Index>(i), 0) = m;
      rows(static_cast<Eigen::Index>(i), 1) = c.basis.terms;
      for (std::size_t k = 0; k < d.methods.size(); ++k) {
        const Row r = evaluate(d.methods[k], m, d.methods[k] == BasisMethod::vs ? &*lib : nullptr);
        rows.block(static_cast<Eigen::Index>(i), 2 + 3 * static_cast<Eigen::Index>(k), 1, 3) << r.err.eps_inf, r.err.eps_2, r.tau;
      }
    }
    io::write_csv(ctx.file("table_m.csv"), header, rows);
    summary["m_sweep"] = d.m_sweep;
  }
  if (!d.n_sweep.empty()) {
    const auto header = headers({"per_neighborhood", "terms"}, {BasisMethod::vs});
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(d.n_sweep.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t i = 0; i < d.n_sweep.size(); ++i) {
      const StochasticBasisLibrary lib = library_for(ctx, s, d.n_sweep_m, d.n_sweep[i], false);
      const Row r = evaluate(BasisMethod::vs, d.n_sweep_m, &lib);
      rows.row(static_cast<Eigen::Index>(i)) << d.n_sweep_m, d.n_sweep[i], r.err.eps_inf, r.err.eps_2, r.tau;
    }
    io::write_csv(ctx.file("table_n.csv"), header, rows);
    const Row direct = evaluate(BasisMethod::direct_lift, d.n_sweep_m, nullptr);
    summary["n_sweep"] = d.n_sweep;
    summary["tau_direct_lift"] = direct.tau;
  }
  if (!d.kl_sweep.empty()) {
    const SyntheticData data = synthetic_data(c, s.mesh);
    const FineForward gf(s.mesh, spec);
    const ForwardMap fine_map = [&](const Eigen::VectorXd& x) { return gf(x); };
    const std::vector<std::string> header{"per_neighborhood", "l2", "l2_se", "kl", "kl_se", "ess", "reliable", "acceptance", "ratio"};
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(d.kl_sweep.size()), static_cast<Eigen::Index>(header.size()));
    ChainOptions opt = c.chain.options;
    opt.steps = d.kl_steps;
    for (std::size_t i = 0; i < d.kl_sweep.size(); ++i) {
      const int m = d.kl_sweep[i];
      const StochasticBasisLibrary lib = library_for(ctx, s, m, c.basis.terms, false);
      CoarseForward g(s.mesh, s.grid, spec, m, BasisMethod::vs);
      g.attach_library(&lib);
      Rng rng(d.seed);
      const KlPoint p = kl_point(fine_map, [&](const Eigen::VectorXd& x) { return g(x); }, s.prior, s.mesh, data.noisy,
                                 c.data.sigma, c.chain.tv, opt, d.kl_draws, d.kl_mc, rng, ctx.threads);
      rows.row(static_cast<Eigen::Index>(i)) << m, p.l2.value, p.l2.std_error, p.kl.value, p.kl.std_error, p.kl.ess,
          p.kl_reliable ? 1.0 : 0.0, p.acceptance, p.kl.value / p.l2.value;
    }
    io::write_csv(ctx.file("kl.csv"), header, rows);
    summary["kl_sweep"] = d.kl_sweep;
    summary["kl_reference"] = "fine solver at forward.dt";
  }
  summary["samples"] = d.samples;
  summary["timing_evaluations"] = d.timing_evaluations;
  ctx.summary = summary;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable-separation multiscale surrogates for Bayesian permeability inversion"};
  app.set_version_flag("--version", version);
  app.require_subcommand(1);

  fs::path config_path, out_dir, library_path;
  long long seed = -1;
  int threads = hardware_threads();
  bool resume = false;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "Override every seed in the config")->check(CLI::NonNegativeNumber);
    sub->add_option("--threads", threads, "Worker threads for sample loops")->check(CLI::PositiveNumber);
  };
  auto* forward = app.add_subcommand("forward", "Fine and surrogate trajectories at the truth (or zero) field");
  auto* build = app.add_subcommand("build-basis", "Train and save the basis library");
  auto* chain = app.add_subcommand("chain", "Synthetic data, pCN chain and posterior exports");
  auto* diagnose = app.add_subcommand("diagnose", "Forward-error tables and KL / L2 sweeps");
  for (auto* sub : {forward, build, chain, diagnose}) common(sub);
  for (auto* sub : {forward, chain})
    sub->add_option("--library", library_path, "Basis library from build-basis")->check(CLI::ExistingFile);
  chain->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    Context ctx;
    ctx.cfg = RunConfig::load(config_path);
    if (seed >= 0) ctx.cfg.override_seed(static_cast<std::uint64_t>(seed));
    ctx.out = out_dir.empty() ? ctx.cfg.output_dir : out_dir;
    ctx.library_file = library_path;
    ctx.threads = threads;
    fs::create_directories(ctx.out);
    if (forward->parsed()) {
      ctx.command = "forward";
      cmd_forward(ctx);
    } else if (build->parsed()) {
      ctx.command = "build-basis";
      cmd_build_basis(ctx);
    } else if (chain->parsed()) {
      ctx.command = "chain";
      cmd_chain(ctx, resume);
    } else {
      ctx.command = "diagnose";
      cmd_diagnose(ctx);
    }
    write_manifest(ctx);
    std::cout << ctx.command << ": wrote " << ctx.outputs.size() << " files to " << ctx.out.string() << '\n'
              << ctx.summary.dump(2) << '\n';
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
