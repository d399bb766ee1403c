#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "vsms/error.hpp"
#include "vsms/gmsfem.hpp"
#include "vsms/io.hpp"
#include "vsms/random_field.hpp"
#include "vsms/vs.hpp"

namespace vsms {

struct LibraryConfig {
  int basis_per_neighborhood = 3;  // M
  int max_terms = 20;              // N
  int training_size = 200;         // samples per template
  std::uint64_t seed = 20240601;
  KernelParams kernel;             // lengths in domain units of the target mesh
  double relative_jitter = GaussianPrior::default_relative_jitter;

  void validate() const {
    kernel.validate();
    if (basis_per_neighborhood < 1 || max_terms < 1 || training_size < 1)
      throw Error(ErrorKind::invalid_dimension, "library sizes must be positive");
  }
};

/// Quantities that determine a library's content. Length scales are stored in
/// units of fine cells, so a library built for one mesh applies to any mesh
/// with the same local structure.
struct LibraryKey {
  int block_x = 0;
  int block_y = 0;
  double length_x_cells = 0.0;
  double length_y_cells = 0.0;
  double aspect = 1.0;  // hy / hx
  double variance = 0.0;
  int basis_per_neighborhood = 0;
  int max_terms = 0;
  int training_size = 0;
  std::uint64_t seed = 0;
  double relative_jitter = 0.0;

  std::uint64_t hash() const {
    // Lengths and aspect rounded so equal local structure from different
    // meshes (0.07 at h = 1/80 vs 0.056 at h = 1/100) hashes equally.
    const auto q = [](double v) { return static_cast<std::int64_t>(std::llround(v * 1e6)); };
    io::Fnv1a h;
    h.add(block_x).add(block_y).add(q(length_x_cells)).add(q(length_y_cells)).add(q(aspect));
    h.add(q(variance)).add(basis_per_neighborhood).add(max_terms).add(training_size).add(seed);
    h.add(q(relative_jitter * 1e12));
    return h.value();
  }
};

inline LibraryKey make_library_key(const CoarseGrid& grid, double hx, double hy, const LibraryConfig& cfg) {
  LibraryKey k;
  k.block_x = grid.block_x();
  k.block_y = grid.block_y();
  k.length_x_cells = cfg.kernel.length_x / hx;
  k.length_y_cells = cfg.kernel.length_y / hy;
  k.aspect = hy / hx;
  k.variance = cfg.kernel.variance;
  k.basis_per_neighborhood = cfg.basis_per_neighborhood;
  k.max_terms = cfg.max_terms;
  k.training_size = cfg.training_size;
  k.seed = cfg.seed;
  k.relative_jitter = cfg.relative_jitter;
  return k;
}

/// Everything needed to evaluate the multiscale basis of one template.
struct TemplateEntry {
  Template kind = Template::interior;
  int cells_x = 0;
  int cells_y = 0;
  EffectiveBoundarySet boundary;       // computed at kappa = 1
  std::vector<Eigen::VectorXd> lifts;  // per j: psi_j at kappa = 1
  SeparatedRepresentation rep;         // trained on the summed lift
  std::vector<Eigen::MatrixXd> physical_modes;  // per j: Phi_{j,q}, nodes x N
  std::vector<int> selected;
  std::vector<double> max_indicator;
  std::vector<double> mode_norms;
  std::vector<Eigen::VectorXd> selected_xi;

  int num_basis() const noexcept { return static_cast<int>(lifts.size()); }

  /// Stacked per-j data so a basis evaluation is one matrix-vector product.
  void finalize() {
    const Eigen::Index nodes = rep.lift().size();
    const int m = num_basis();
    stacked_lifts_.resize(nodes * m);
    stacked_modes_.resize(nodes * m, rep.num_terms());
    for (int j = 0; j < m; ++j) {
      stacked_lifts_.segment(j * nodes, nodes) = lifts[static_cast<std::size_t>(j)];
      stacked_modes_.middleRows(j * nodes, nodes) = physical_modes[static_cast<std::size_t>(j)];
    }
  }

  /// Column j = lift_j + sum_q eta_q Phi_{j,q}, as full patch fields.
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& kappa) const {
    const Eigen::VectorXd eta = rep.eval_eta(kappa);
    Eigen::VectorXd stacked = stacked_lifts_;
    stacked.noalias() += stacked_modes_ * eta;
    return Eigen::Map<const Eigen::MatrixXd>(stacked.data(), rep.lift().size(), num_basis());
  }

 private:
  Eigen::VectorXd stacked_lifts_;
  Eigen::MatrixXd stacked_modes_;
};

/// Sum of the per-basis lifts; the greedy step trains on this field.
inline Eigen::VectorXd sum_boundaries(const std::vector<Eigen::VectorXd>& lifts) {
  if (lifts.empty()) throw Error(ErrorKind::invalid_dimension, "no lifts to sum");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(lifts.front().size());
  for (const auto& l : lifts) s += l;
  return s;
}

/// Splits the trained modes by boundary condition. At each selected sample
///   a(Phi_{j,k}, v) = -a(lift_j, v) - sum_{q<k} eta_q a(Phi_{j,q}, v),
/// with eta from the trained recurrence, so sum_j Phi_{j,k} = Phi_k.
inline std::vector<Eigen::MatrixXd> decompose_physical(const LocalProblem& problem, const SeparatedRepresentation& rep,
                                                       const std::vector<Eigen::VectorXd>& selected_xi,
                                                       const std::vector<Eigen::VectorXd>& lifts) {
  const int n = rep.num_terms();
  if (static_cast<int>(selected_xi.size()) != n) throw Error(ErrorKind::invalid_dimension, "one sample per mode required");
  const int m = static_cast<int>(lifts.size());
  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(m), Eigen::MatrixXd::Zero(problem.num_nodes(), n));
  for (int k = 0; k < n; ++k) {
    const Eigen::VectorXd kappa = selected_xi[static_cast<std::size_t>(k)].array().exp().matrix();
    const Eigen::VectorXd eta = rep.eval_eta(kappa, k);
    Eigen::MatrixXd fields(problem.num_nodes(), m);
    for (int j = 0; j < m; ++j) {
      const auto& modes = out[static_cast<std::size_t>(j)];
      fields.col(j) = lifts[static_cast<std::size_t>(j)] + modes.leftCols(k) * eta;
    }
    const Eigen::MatrixXd x = problem.correction(kappa, fields);
    for (int j = 0; j < m; ++j) out[static_cast<std::size_t>(j)].col(k) = problem.extend_interior(x.col(j));
  }
  return out;
}

/// Per-template effective boundary functions at kappa = 1 and their lifts.
inline TemplateEntry template_boundary(const CoarseGrid& grid, Template t, int count) {
  const FineMesh patch = grid.template_patch(t);
  const LocalProblem problem(patch);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(patch.num_cells());
  TemplateEntry e;
  e.kind = t;
  e.cells_x = patch.nx();
  e.cells_y = patch.ny();
  e.boundary = reduce_snapshots(problem, build_snapshots(problem, one), one, count);
  // Lift = psi_j itself (the kappa = 1 extension of its trace), so the
  // separated terms only carry the deviation from the mean coefficient.
  const Eigen::MatrixXd ext = problem.harmonic_extension(one, e.boundary.traces);
  for (int j = 0; j < count; ++j) e.lifts.push_back(ext.col(j));
  return e;
}

/// Offline library: one separated representation per template.
class StochasticBasisLibrary {
 public:
  static constexpr char magic[8] = {'V', 'S', 'M', 'S', 'L', 'I', 'B', '1'};

  StochasticBasisLibrary() = default;

  const LibraryKey& key() const noexcept { return key_; }
  std::uint64_t hash() const { return key_.hash(); }
  int basis_per_neighborhood() const noexcept { return key_.basis_per_neighborhood; }
  const TemplateEntry& entry(Template t) const { return entries_[static_cast<std::size_t>(t)]; }
  TemplateEntry& entry(Template t) { return entries_[static_cast<std::size_t>(t)]; }

  void set_key(const LibraryKey& key) { key_ = key; }

  /// Throws stale-library unless this library was built for `expected`.
  void check(const LibraryKey& expected) const {
    if (expected.hash() != hash())
      throw Error(ErrorKind::stale_library, "library hash " + hex(hash()) + " does not match configuration " + hex(expected.hash()));
  }

  void save(const std::filesystem::path& path) const {
    auto os = io::open_out(path, true);
    os.write(magic, sizeof(magic));
    nlohmann::json h = header();
    io::write_string(os, h.dump());
    for (const TemplateEntry& e : entries_) {
      io::write_matrix(os, e.boundary.traces);
      io::write_vector(os, e.boundary.eigenvalues);
      io::write_vector(os, e.boundary.all_eigenvalues);
      io::write_vector(os, e.rep.lift());
      io::write_matrix(os, e.rep.modes());
      io::write_matrix(os, e.rep.b());
      io::write_matrix(os, e.rep.abar());
      io::write_matrix(os, e.rep.cross());
      for (const auto& l : e.lifts) io::write_vector(os, l);
      for (const auto& p : e.physical_modes) io::write_matrix(os, p);
      for (const auto& x : e.selected_xi) io::write_vector(os, x);
    }
    if (!os) throw Error(ErrorKind::format, "failed writing library " + path.string());
  }

  static StochasticBasisLibrary load(const std::filesystem::path& path) {
    auto is = io::open_in(path, true);
    char tag[8];
    is.read(tag, sizeof(tag));
    if (!is || std::string(tag, 8) != std::string(magic, 8)) throw Error(ErrorKind::format, "not a basis library: " + path.string());
    nlohmann::json h;
    try {
      h = nlohmann::json::parse(io::read_string(is));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::format, std::string("library header: ") + ex.what());
    }
    StochasticBasisLibrary lib;
    try {
      const auto& k = h.at("key");
      lib.key_.block_x = k.at("block_x");
      lib.key_.block_y = k.at("block_y");
      lib.key_.length_x_cells = k.at("length_x_cells");
      lib.key_.length_y_cells = k.at("length_y_cells");
      lib.key_.aspect = k.at("aspect");
      lib.key_.variance = k.at("variance");
      lib.key_.basis_per_neighborhood = k.at("basis_per_neighborhood");
      lib.key_.max_terms = k.at("max_terms");
      lib.key_.training_size = k.at("training_size");
      lib.key_.seed = k.at("seed");
      lib.key_.relative_jitter = k.at("relative_jitter");
      if (h.at("hash").get<std::string>() != hex(lib.hash())) throw Error(ErrorKind::format, "library header hash mismatch");
      const auto& ts = h.at("templates");
      if (ts.size() != 4) throw Error(ErrorKind::format, "library must hold four templates");
      for (std::size_t t = 0; t < 4; ++t) {
        TemplateEntry& e = lib.entries_[t];
        e.kind = static_cast<Template>(t);
        e.cells_x = ts[t].at("cells_x");
        e.cells_y = ts[t].at("cells_y");
        e.selected = ts[t].at("selected").get<std::vector<int>>();
        e.max_indicator = ts[t].at("max_indicator").get<std::vector<double>>();
        e.mode_norms = ts[t].at("mode_norms").get<std::vector<double>>();
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::format, std::string("library header: ") + ex.what());
    }
    const int m = lib.key_.basis_per_neighborhood;
    for (TemplateEntry& e : lib.entries_) {
      e.boundary.traces = io::read_matrix(is);
      e.boundary.eigenvalues = io::read_vector(is);
      e.boundary.all_eigenvalues = io::read_vector(is);
      Eigen::VectorXd lift = io::read_vector(is);
      Eigen::MatrixXd modes = io::read_matrix(is);
      Eigen::MatrixXd b = io::read_matrix(is);
      Eigen::MatrixXd abar = io::read_matrix(is);
      Eigen::MatrixXd cross = io::read_matrix(is);
      const int pieces = e.cells_x * e.cells_y;
      e.rep = SeparatedRepresentation::from_blocks(pieces, std::move(lift), std::move(modes), std::move(b), std::move(abar),
                                                   std::move(cross));
      for (int j = 0; j < m; ++j) e.lifts.push_back(io::read_vector(is));
      for (int j = 0; j < m; ++j) e.physical_modes.push_back(io::read_matrix(is));
      for (int k = 0; k < e.rep.num_terms(); ++k) e.selected_xi.push_back(io::read_vector(is));
      for (const auto& p : e.physical_modes)
        if (p.rows() != e.rep.lift().size() || p.cols() != e.rep.num_terms())
          throw Error(ErrorKind::format, "physical mode block has the wrong shape");
      e.finalize();
    }
    return lib;
  }

  nlohmann::json header() const {
    nlohmann::json h;
    h["format"] = "vsms-basis-library";
    h["version"] = 1;
    h["hash"] = hex(hash());
    h["key"] = {{"block_x", key_.block_x},
                {"block_y", key_.block_y},
                {"length_x_cells", key_.length_x_cells},
                {"length_y_cells", key_.length_y_cells},
                {"aspect", key_.aspect},
                {"variance", key_.variance},
                {"basis_per_neighborhood", key_.basis_per_neighborhood},
                {"max_terms", key_.max_terms},
                {"training_size", key_.training_size},
                {"seed", key_.seed},
                {"relative_jitter", key_.relative_jitter}};
    nlohmann::json ts = nlohmann::json::array();
    for (const TemplateEntry& e : entries_) {
      ts.push_back({{"template", template_name(e.kind)},
                    {"cells_x", e.cells_x},
                    {"cells_y", e.cells_y},
                    {"terms", e.rep.num_terms()},
                    {"selected", e.selected},
                    {"max_indicator", e.max_indicator},
                    {"mode_norms", e.mode_norms},
                    {"eigenvalues", std::vector<double>(e.boundary.eigenvalues.data(),
                                                        e.boundary.eigenvalues.data() + e.boundary.eigenvalues.size())}});
    }
    h["templates"] = ts;
    return h;
  }

  static std::string hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int k = 15; k >= 0; --k, v >>= 4) s[static_cast<std::size_t>(k)] = digits[v & 0xf];
    return s;
  }

 private:
  LibraryKey key_;
  std::array<TemplateEntry, 4> entries_;
};

/// Builds the four-template library for `grid`. Each template draws its
/// training set from its own seeded stream.
inline StochasticBasisLibrary build_library(const CoarseGrid& grid, double hx, double hy, const LibraryConfig& cfg) {
  cfg.validate();
  StochasticBasisLibrary lib;
  lib.set_key(make_library_key(grid, hx, hy, cfg));
  for (Template t : all_templates) {
    TemplateEntry e = template_boundary(grid, t, cfg.basis_per_neighborhood);
    const FineMesh patch = grid.template_patch(t);
    const LocalProblem problem(patch);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(t)};
    Rng rng(seq);
    const GaussianPrior local_prior(patch.nx(), patch.ny(), patch.hx(), patch.hy(), cfg.kernel,
                                    cfg.relative_jitter * cfg.kernel.variance);
    const TrainingSet training = sample_training_set(local_prior, cfg.training_size, rng);
    GreedyOptions opt;
    opt.max_terms = cfg.max_terms;
    GreedyResult g = vs_greedy(problem, sum_boundaries(e.lifts), training, opt, rng);
    e.rep = std::move(g.rep);
    e.selected = g.selected;
    e.max_indicator = g.max_indicator;
    e.mode_norms = g.mode_norms;
    for (int s : e.selected) e.selected_xi.push_back(training.xi[static_cast<std::size_t>(s)]);
    e.physical_modes = decompose_physical(problem, e.rep, e.selected_xi, e.lifts);
    e.finalize();
    lib.entry(t) = std::move(e);
  }
  return lib;
}

}  // namespace vsms
