#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "vsms/coarse.hpp"
#include "vsms/ensemble.hpp"
#include "vsms/error.hpp"
#include "vsms/io.hpp"
#include "vsms/mcmc.hpp"
#include "vsms/mesh.hpp"
#include "vsms/random_field.hpp"

namespace vsms {

/// One piece of a synthetic log-permeability field. Shapes are painted in
/// order, so a later shape overwrites an earlier one where they overlap.
struct TruthShape {
  enum class Kind { disk, ellipse, rect, heart };
  Kind kind = Kind::disk;
  Point center = Point(0.5, 0.5);
  double radius = 0.1;    // disk; heart half-width
  double radius_x = 0.1;  // ellipse semi-axes
  double radius_y = 0.1;
  double angle = 0.0;     // ellipse rotation, radians
  Point lower = Point(0.0, 0.0);
  Point upper = Point(1.0, 1.0);
  double value = 0.0;     // log-permeability inside

  bool contains(const Point& p) const {
    const Point d = p - center;
    switch (kind) {
      case Kind::disk: return d.squaredNorm() <= radius * radius;
      case Kind::ellipse: {
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * d.x() + s * d.y()) / radius_x;
        const double v = (-s * d.x() + c * d.y()) / radius_y;
        return u * u + v * v <= 1.0;
      }
      case Kind::rect: return p.x() >= lower.x() && p.x() <= upper.x() && p.y() >= lower.y() && p.y() <= upper.y();
      case Kind::heart: {
        // (x^2 + y^2 - 1)^3 - x^2 y^3 <= 0 spans |x| <= ~1.14; scale to the half-width.
        const double k = 1.139 / radius;
        const double x = k * d.x(), y = k * d.y();
        const double r = x * x + y * y - 1.0;
        return r * r * r - x * x * y * y * y <= 0.0;
      }
    }
    return false;
  }
};

struct TruthField {
  double background = 0.0;
  std::vector<TruthShape> shapes;

  /// Log-permeability at the cell centers of `mesh`.
  Eigen::VectorXd on(const FineMesh& mesh) const {
    Eigen::VectorXd xi = Eigen::VectorXd::Constant(mesh.num_cells(), background);
    for (int c = 0; c < mesh.num_cells(); ++c) {
      const Point p = mesh.cell_center(c);
      for (const auto& s : shapes)
        if (s.contains(p)) xi[c] = s.value;
    }
    return xi;
  }
};

/// A set of (point, time) pairs at which chain responses are summarised.
struct BandSpec {
  std::string name;
  std::vector<Point> points;
  std::vector<double> times;
};

struct RunConfig {
  struct Mesh {
    int fine_nx = 80, fine_ny = 80;
    int coarse_nx = 8, coarse_ny = 8;
  } mesh;

  KernelParams kernel{0.1, 0.07, 0.07};
  double relative_jitter = GaussianPrior::default_relative_jitter;

  struct Basis {
    BasisMethod method = BasisMethod::vs;
    int per_neighborhood = 3;
    int terms = 20;
    int training_size = 200;
    std::uint64_t seed = 20240601;
  } basis;

  struct Forward {
    enum class Source { zero, constant, plume } source = Source::plume;
    GaussianPlume plume;
    double source_value = 0.0;
    std::optional<AffineBoundary> boundary = AffineBoundary{1.7, -1.4, 0.0};
    double storage = 1.0;
    double dt = 0.002;
    double end_time = 0.15;
    std::vector<Point> sensors;
    std::vector<double> times;
    int export_every = 0;  // 0: roughly 20 exported time levels
  } forward;

  struct Data {
    double sigma = 0.01;
    double dt = 0.001;
    std::uint64_t seed = 5;
    std::optional<TruthField> truth;
  } data;

  struct ChainCfg {
    ChainOptions options;
    TvPenalty tv{300.0, 1e-3, true};
    std::vector<int> trace_cells;
    std::vector<BandSpec> bands;
    int band_draws = 200;
    double band_level = 0.95;
    double component_threshold = 1.0;
  } chain;

  struct Diagnose {
    int samples = 100;
    std::uint64_t seed = 11;
    int timing_evaluations = 50;
    std::vector<BasisMethod> methods{BasisMethod::vs, BasisMethod::direct_lift, BasisMethod::gmsfem};
    std::vector<int> m_sweep{3, 5, 7};
    std::vector<int> n_sweep;  // empty: skipped
    int n_sweep_m = 3;
    std::vector<int> kl_sweep;  // empty: skipped
    int kl_mc = 200;
    long kl_steps = 20000;
    int kl_draws = 500;
  } diagnose;

  std::filesystem::path output_dir = "out";
  nlohmann::json source = nlohmann::json::object();

  /// Seeds replaced by a --seed override.
  void override_seed(std::uint64_t s) {
    basis.seed = s;
    data.seed = s;
    chain.options.seed = s;
    diagnose.seed = s;
  }

  LibraryConfig library() const {
    LibraryConfig c;
    c.basis_per_neighborhood = basis.per_neighborhood;
    c.max_terms = basis.terms;
    c.training_size = basis.training_size;
    c.seed = basis.seed;
    c.kernel = kernel;
    c.relative_jitter = relative_jitter;
    return c;
  }

  ForwardSpec forward_spec(const FineMesh& m, double dt) const {
    ForwardSpec s;
    switch (forward.source) {
      case Forward::Source::zero: s.problem.source = Eigen::VectorXd::Zero(m.num_nodes()); break;
      case Forward::Source::constant: s.problem.source = Eigen::VectorXd::Constant(m.num_nodes(), forward.source_value); break;
      case Forward::Source::plume: s.problem.source = nodal_values(m, forward.plume); break;
    }
    s.problem.dirichlet = forward.boundary;
    s.problem.storage = forward.storage;
    s.problem.dt = dt;
    s.problem.end_time = forward.end_time;
    s.sensors = forward.sensors;
    s.obs_times = forward.times;
    return s;
  }

  std::uint64_t hash() const {
    const std::string text = source.dump();
    io::Fnv1a h;
    h.bytes(text.data(), text.size());
    return h.value();
  }

  static RunConfig parse(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);
};

namespace config_detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::config, path + ": " + what);
}

/// A JSON object plus its dotted location, for error messages.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
    for (const auto& [key, value] : j.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) fail(child(key), "unknown field");
    }
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const char* key) const { return j_.contains(key); }
  const nlohmann::json& raw(const char* key) const {
    if (!has(key)) fail(child(key), "missing required field");
    return j_.at(key);
  }
  Section section(const char* key, std::initializer_list<const char*> allowed) const {
    return Section(raw(key), child(key), allowed);
  }

  double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }
  double number(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_number()) fail(child(key), "expected a number");
    return v.get<double>();
  }
  long integer(const char* key, long fallback) const { return has(key) ? integer(key) : fallback; }
  long integer(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_number_integer()) fail(child(key), "expected an integer");
    return v.get<long>();
  }
  std::uint64_t seed(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number_unsigned()) fail(child(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) fail(child(key), "expected true or false");
    return v.get<bool>();
  }
  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_string()) fail(child(key), "expected a string");
    return v.get<std::string>();
  }
  Point point(const char* key, const Point& fallback) const { return has(key) ? to_point(raw(key), child(key)) : fallback; }
  std::vector<int> integers(const char* key, const std::vector<int>& fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_array()) fail(child(key), "expected an array of integers");
    std::vector<int> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number_integer()) fail(child(key) + "[" + std::to_string(k) + "]", "expected an integer");
      out.push_back(v[k].get<int>());
    }
    return out;
  }
  /// Either a single number (both directions) or a two-element array.
  std::pair<double, double> pair(const char* key, std::pair<double, double> fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (v.is_number()) return {v.get<double>(), v.get<double>()};
    const Point p = to_point(v, child(key));
    return {p.x(), p.y()};
  }
  std::pair<int, int> int_pair(const char* key, std::pair<int, int> fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
      fail(child(key), "expected an integer or [nx, ny]");
    return {v[0].get<int>(), v[1].get<int>()};
  }

  static Point to_point(const nlohmann::json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) fail(path, "expected [x, y]");
    return Point(v[0].get<double>(), v[1].get<double>());
  }

  const std::string& path() const noexcept { return path_; }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

/// Times as an explicit array or as {"start", "stop", "step"}.
inline std::vector<double> parse_times(const nlohmann::json& v, const std::string& path) {
  std::vector<double> out;
  if (v.is_array()) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number()) fail(path + "[" + std::to_string(k) + "]", "expected a number");
      out.push_back(v[k].get<double>());
    }
  } else {
    const Section s(v, path, {"start", "stop", "step"});
    const double a = s.number("start"), b = s.number("stop"), h = s.number("step");
    if (!(h > 0.0) || b < a) fail(path, "need step > 0 and stop >= start");
    const long n = std::lround((b - a) / h);
    for (long k = 0; k <= n; ++k) out.push_back(a + static_cast<double>(k) * h);
  }
  if (out.empty()) fail(path, "no times given");
  return out;
}

/// Points as an explicit array, a grid {"grid", "start", "spacing"}, or a
/// line {"from", "to", "count"}.
inline std::vector<Point> parse_points(const nlohmann::json& v, const std::string& path) {
  std::vector<Point> out;
  if (v.is_array()) {
    for (std::size_t k = 0; k < v.size(); ++k) out.push_back(Section::to_point(v[k], path + "[" + std::to_string(k) + "]"));
  } else if (v.is_object() && v.contains("grid")) {
    const Section s(v, path, {"grid", "start", "spacing"});
    const auto [nx, ny] = s.int_pair("grid", {0, 0});
    if (nx < 1 || ny < 1) fail(s.child("grid"), "must be positive");
    const Point a = s.point("start", Point(0.0, 0.0));
    const auto [hx, hy] = s.pair("spacing", {0.0, 0.0});
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) out.emplace_back(a.x() + i * hx, a.y() + j * hy);
  } else {
    const Section s(v, path, {"from", "to", "count"});
    const Point a = s.point("from", Point(0.0, 0.0)), b = s.point("to", Point(1.0, 1.0));
    const long n = s.integer("count");
    if (n < 2) fail(s.child("count"), "need at least two points");
    for (long k = 0; k < n; ++k) out.push_back(a + (b - a) * (static_cast<double>(k) / static_cast<double>(n - 1)));
  }
  for (std::size_t k = 0; k < out.size(); ++k)
    if (out[k].x() < 0.0 || out[k].x() > 1.0 || out[k].y() < 0.0 || out[k].y() > 1.0)
      fail(path, "point " + std::to_string(k) + " lies outside the unit square");
  if (out.empty()) fail(path, "no points given");
  return out;
}

inline BasisMethod parse_method(const std::string& name, const std::string& path) {
  if (name == "vs") return BasisMethod::vs;
  if (name == "direct_lift") return BasisMethod::direct_lift;
  if (name == "gmsfem") return BasisMethod::gmsfem;
  fail(path, "unknown method '" + name + "' (vs, direct_lift, gmsfem)");
}

inline TruthShape parse_shape(const nlohmann::json& v, const std::string& path) {
  TruthShape s;
  if (!v.is_object() || !v.contains("type")) fail(path, "expected an object with a type");
  const std::string type = v.at("type").is_string() ? v.at("type").get<std::string>() : "";
  if (type == "disk") {
    const Section f(v, path, {"type", "center", "radius", "value"});
    s.kind = TruthShape::Kind::disk;
    s.center = f.point("center", s.center);
    s.radius = f.number("radius");
    s.value = f.number("value");
  } else if (type == "ellipse") {
    const Section f(v, path, {"type", "center", "radii", "angle", "value"});
    s.kind = TruthShape::Kind::ellipse;
    s.center = f.point("center", s.center);
    std::tie(s.radius_x, s.radius_y) = f.pair("radii", {0.0, 0.0});
    s.angle = f.number("angle", 0.0);
    s.value = f.number("value");
  } else if (type == "rect") {
    const Section f(v, path, {"type", "lower", "upper", "value"});
    s.kind = TruthShape::Kind::rect;
    s.lower = f.point("lower", s.lower);
    s.upper = f.point("upper", s.upper);
    s.value = f.number("value");
  } else if (type == "heart") {
    const Section f(v, path, {"type", "center", "radius", "value"});
    s.kind = TruthShape::Kind::heart;
    s.center = f.point("center", s.center);
    s.radius = f.number("radius");
    s.value = f.number("value");
  } else {
    fail(path + ".type", "unknown shape '" + type + "' (disk, ellipse, rect, heart)");
  }
  if (!(s.radius > 0.0) || !(s.radius_x > 0.0) || !(s.radius_y > 0.0)) fail(path, "radii must be positive");
  return s;
}

inline void check_lattice(const std::vector<double>& times, double dt, double end, const std::string& path, const std::string& grid) {
  for (double t : times) {
    const double r = t / dt;
    if (t <= 0.0 || t > end * (1.0 + 1e-12) || std::abs(r - std::round(r)) > 1e-8 * std::max(1.0, r))
      fail(path, "time " + std::to_string(t) + " is not a positive multiple of " + grid + " within forward.end_time");
  }
}

}  // namespace config_detail

inline RunConfig RunConfig::parse(const nlohmann::json& doc) {
  using config_detail::fail;
  using config_detail::Section;
  RunConfig c;
  c.source = doc;
  const Section root(doc, "", {"description", "mesh", "prior", "basis", "forward", "data", "chain", "diagnose", "output"});

  if (root.has("mesh")) {
    const Section m = root.section("mesh", {"fine", "coarse"});
    std::tie(c.mesh.fine_nx, c.mesh.fine_ny) = m.int_pair("fine", {c.mesh.fine_nx, c.mesh.fine_ny});
    std::tie(c.mesh.coarse_nx, c.mesh.coarse_ny) = m.int_pair("coarse", {c.mesh.coarse_nx, c.mesh.coarse_ny});
    if (c.mesh.fine_nx < 2 || c.mesh.fine_ny < 2) fail("mesh.fine", "need at least two cells per direction");
    if (c.mesh.coarse_nx < 1 || c.mesh.coarse_ny < 1) fail("mesh.coarse", "must be positive");
    if (c.mesh.fine_nx % c.mesh.coarse_nx != 0 || c.mesh.fine_ny % c.mesh.coarse_ny != 0)
      fail("mesh.coarse", "must divide mesh.fine in both directions");
  }

  if (root.has("prior")) {
    const Section p = root.section("prior", {"variance", "length", "jitter"});
    c.kernel.variance = p.number("variance", c.kernel.variance);
    std::tie(c.kernel.length_x, c.kernel.length_y) = p.pair("length", {c.kernel.length_x, c.kernel.length_y});
    c.relative_jitter = p.number("jitter", c.relative_jitter);
    if (!(c.kernel.variance > 0.0)) fail("prior.variance", "must be positive");
    if (!(c.kernel.length_x > 0.0 && c.kernel.length_y > 0.0)) fail("prior.length", "must be positive");
    if (!(c.relative_jitter >= 0.0)) fail("prior.jitter", "must be non-negative");
  }

  if (root.has("basis")) {
    const Section b = root.section("basis", {"method", "per_neighborhood", "terms", "training_size", "seed"});
    c.basis.method = config_detail::parse_method(b.text("method", "vs"), b.child("method"));
    c.basis.per_neighborhood = static_cast<int>(b.integer("per_neighborhood", c.basis.per_neighborhood));
    c.basis.terms = static_cast<int>(b.integer("terms", c.basis.terms));
    c.basis.training_size = static_cast<int>(b.integer("training_size", c.basis.training_size));
    c.basis.seed = b.seed("seed", c.basis.seed);
    if (c.basis.per_neighborhood < 1) fail("basis.per_neighborhood", "must be positive");
    if (c.basis.terms < 1) fail("basis.terms", "must be positive");
    if (c.basis.training_size < 1) fail("basis.training_size", "must be positive");
  }

  auto& f = c.forward;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) f.sensors.emplace_back(0.05 + 0.15 * j, 0.05 + 0.15 * i);
  for (int k = 2; k <= 11; ++k) f.times.push_back(0.01 * k);
  if (root.has("forward")) {
    const Section s = root.section("forward", {"source", "boundary", "storage", "dt", "end_time", "sensors", "times", "export_every"});
    if (s.has("source")) {
      const auto& v = s.raw("source");
      const std::string type = v.is_object() && v.contains("type") && v.at("type").is_string() ? v.at("type").get<std::string>() : "";
      if (type == "zero") {
        Section(v, s.child("source"), {"type"});
        f.source = RunConfig::Forward::Source::zero;
      } else if (type == "constant") {
        const Section src(v, s.child("source"), {"type", "value"});
        f.source = RunConfig::Forward::Source::constant;
        f.source_value = src.number("value");
      } else if (type == "plume") {
        const Section src(v, s.child("source"), {"type", "center", "std", "weight"});
        f.source = RunConfig::Forward::Source::plume;
        f.plume.center = src.point("center", f.plume.center);
        f.plume.std_dev = src.number("std", f.plume.std_dev);
        f.plume.weight = src.number("weight", f.plume.weight);
        if (!(f.plume.std_dev > 0.0)) fail(src.child("std"), "must be positive");
      } else {
        fail(s.child("source") + ".type", "expected zero, constant or plume");
      }
    }
    if (s.has("boundary")) {
      const auto& v = s.raw("boundary");
      const std::string type = v.is_object() && v.contains("type") && v.at("type").is_string() ? v.at("type").get<std::string>() : "";
      if (type == "no_flow") {
        Section(v, s.child("boundary"), {"type"});
        f.boundary.reset();
      } else if (type == "affine") {
        const Section b(v, s.child("boundary"), {"type", "c0", "c1", "c2"});
        f.boundary = AffineBoundary{b.number("c0", 0.0), b.number("c1", 0.0), b.number("c2", 0.0)};
      } else {
        fail(s.child("boundary") + ".type", "expected affine or no_flow");
      }
    }
    f.storage = s.number("storage", f.storage);
    f.dt = s.number("dt", f.dt);
    f.end_time = s.number("end_time", f.end_time);
    if (s.has("sensors")) f.sensors = config_detail::parse_points(s.raw("sensors"), s.child("sensors"));
    if (s.has("times")) f.times = config_detail::parse_times(s.raw("times"), s.child("times"));
    f.export_every = static_cast<int>(s.integer("export_every", 0));
    if (f.export_every < 0) fail("forward.export_every", "must be non-negative");
  }
  if (!(f.storage > 0.0)) fail("forward.storage", "must be positive");
  if (!(f.dt > 0.0)) fail("forward.dt", "must be positive");
  {
    const double r = f.end_time / f.dt;
    if (!(f.end_time > 0.0) || std::abs(r - std::round(r)) > 1e-8 * std::max(1.0, r))
      fail("forward.end_time", "must be a positive multiple of forward.dt");
  }
  config_detail::check_lattice(f.times, f.dt, f.end_time, "forward.times", "forward.dt");

  if (root.has("data")) {
    const Section d = root.section("data", {"sigma", "dt", "seed", "truth"});
    c.data.sigma = d.number("sigma", c.data.sigma);
    c.data.dt = d.number("dt", c.data.dt);
    c.data.seed = d.seed("seed", c.data.seed);
    if (!(c.data.sigma > 0.0)) fail("data.sigma", "must be positive");
    if (!(c.data.dt > 0.0)) fail("data.dt", "must be positive");
    const double r = f.end_time / c.data.dt;
    if (std::abs(r - std::round(r)) > 1e-8 * std::max(1.0, r)) fail("data.dt", "forward.end_time must be a multiple of it");
    config_detail::check_lattice(f.times, c.data.dt, f.end_time, "forward.times", "data.dt");
    if (d.has("truth")) {
      const Section t = d.section("truth", {"background", "shapes"});
      TruthField tf;
      tf.background = t.number("background", 0.0);
      if (t.has("shapes")) {
        const auto& arr = t.raw("shapes");
        if (!arr.is_array()) fail(t.child("shapes"), "expected an array");
        for (std::size_t k = 0; k < arr.size(); ++k)
          tf.shapes.push_back(config_detail::parse_shape(arr[k], t.child("shapes") + "[" + std::to_string(k) + "]"));
      }
      c.data.truth = tf;
    }
  }

  if (root.has("chain")) {
    const Section s = root.section("chain", {"steps", "beta", "lambda", "tv_epsilon", "tv_field", "burn_in", "thin",
                                             "checkpoint_every", "seed", "trace_cells", "bands", "band_draws", "band_level",
                                             "component_threshold"});
    auto& o = c.chain.options;
    o.steps = s.integer("steps", o.steps);
    o.beta = s.number("beta", o.beta);
    o.burn_in_fraction = s.number("burn_in", o.burn_in_fraction);
    o.thin = static_cast<int>(s.integer("thin", o.thin));
    o.checkpoint_every = s.integer("checkpoint_every", o.checkpoint_every);
    o.seed = s.seed("seed", o.seed);
    c.chain.tv.lambda = s.number("lambda", c.chain.tv.lambda);
    c.chain.tv.epsilon = s.number("tv_epsilon", c.chain.tv.epsilon);
    const std::string field = s.text("tv_field", "log");
    if (field != "log" && field != "kappa") fail(s.child("tv_field"), "expected log or kappa");
    c.chain.tv.on_log_field = field == "log";
    c.chain.trace_cells = s.integers("trace_cells", {});
    c.chain.band_draws = static_cast<int>(s.integer("band_draws", c.chain.band_draws));
    c.chain.band_level = s.number("band_level", c.chain.band_level);
    c.chain.component_threshold = s.number("component_threshold", c.chain.component_threshold);
    if (o.steps < 1) fail("chain.steps", "must be positive");
    if (!(o.beta > 0.0 && o.beta <= 1.0)) fail("chain.beta", "must lie in (0, 1]");
    if (!(o.burn_in_fraction >= 0.0 && o.burn_in_fraction < 1.0)) fail("chain.burn_in", "must lie in [0, 1)");
    if (o.thin < 1) fail("chain.thin", "must be positive");
    if (o.checkpoint_every < 0) fail("chain.checkpoint_every", "must be non-negative");
    if (!(c.chain.tv.lambda >= 0.0)) fail("chain.lambda", "must be non-negative");
    if (!(c.chain.tv.epsilon > 0.0)) fail("chain.tv_epsilon", "must be positive");
    if (c.chain.band_draws < 2) fail("chain.band_draws", "must be at least 2");
    if (!(c.chain.band_level > 0.0 && c.chain.band_level < 1.0)) fail("chain.band_level", "must lie in (0, 1)");
    const int cells = c.mesh.fine_nx * c.mesh.fine_ny;
    for (std::size_t k = 0; k < c.chain.trace_cells.size(); ++k)
      if (c.chain.trace_cells[k] < 0 || c.chain.trace_cells[k] >= cells)
        fail("chain.trace_cells[" + std::to_string(k) + "]", "cell index out of range");
    if (s.has("bands")) {
      const auto& arr = s.raw("bands");
      if (!arr.is_array()) fail(s.child("bands"), "expected an array");
      for (std::size_t k = 0; k < arr.size(); ++k) {
        const std::string path = s.child("bands") + "[" + std::to_string(k) + "]";
        const Section b(arr[k], path, {"name", "points", "times"});
        BandSpec band;
        band.name = b.text("name", "");
        if (band.name.empty() || band.name.find_first_of("/\\ ") != std::string::npos)
          fail(b.child("name"), "need a non-empty name without spaces or slashes");
        band.points = config_detail::parse_points(b.raw("points"), b.child("points"));
        band.times = config_detail::parse_times(b.raw("times"), b.child("times"));
        config_detail::check_lattice(band.times, f.dt, f.end_time, b.child("times"), "forward.dt");
        config_detail::check_lattice(band.times, c.data.dt, f.end_time, b.child("times"), "data.dt");
        c.chain.bands.push_back(std::move(band));
      }
    }
  }

  if (root.has("diagnose")) {
    const Section s = root.section("diagnose", {"samples", "seed", "timing_evaluations", "methods", "m_sweep", "n_sweep", "n_sweep_m",
                                                "kl_sweep", "kl_mc", "kl_steps", "kl_draws"});
    auto& d = c.diagnose;
    d.samples = static_cast<int>(s.integer("samples", d.samples));
    d.seed = s.seed("seed", d.seed);
    d.timing_evaluations = static_cast<int>(s.integer("timing_evaluations", d.timing_evaluations));
    if (s.has("methods")) {
      const auto& arr = s.raw("methods");
      if (!arr.is_array() || arr.empty()) fail(s.child("methods"), "expected a non-empty array");
      d.methods.clear();
      for (std::size_t k = 0; k < arr.size(); ++k) {
        const std::string path = s.child("methods") + "[" + std::to_string(k) + "]";
        if (!arr[k].is_string()) fail(path, "expected a string");
        d.methods.push_back(config_detail::parse_method(arr[k].get<std::string>(), path));
      }
    }
    d.m_sweep = s.integers("m_sweep", d.m_sweep);
    d.n_sweep = s.integers("n_sweep", d.n_sweep);
    d.n_sweep_m = static_cast<int>(s.integer("n_sweep_m", d.n_sweep_m));
    d.kl_sweep = s.integers("kl_sweep", d.kl_sweep);
    d.kl_mc = static_cast<int>(s.integer("kl_mc", d.kl_mc));
    d.kl_steps = s.integer("kl_steps", d.kl_steps);
    d.kl_draws = static_cast<int>(s.integer("kl_draws", d.kl_draws));
    if (d.samples < 1) fail("diagnose.samples", "must be positive");
    if (d.timing_evaluations < 1) fail("diagnose.timing_evaluations", "must be positive");
    for (const auto* list : {&d.m_sweep, &d.n_sweep, &d.kl_sweep})
      for (int v : *list)
        if (v < 1) fail("diagnose", "sweep entries must be positive");
    if (d.n_sweep_m < 1) fail("diagnose.n_sweep_m", "must be positive");
    if (d.kl_mc < 2) fail("diagnose.kl_mc", "must be at least 2");
    if (d.kl_steps < 1) fail("diagnose.kl_steps", "must be positive");
    if (d.kl_draws < 2) fail("diagnose.kl_draws", "must be at least 2");
  }

  if (root.has("output")) {
    const Section o = root.section("output", {"dir"});
    c.output_dir = o.text("dir", c.output_dir.string());
  }
  return c;
}

inline RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::config, "cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(ErrorKind::config, path.string() + ": " + ex.what());
  }
  return parse(doc);
}

}  // namespace vsms
