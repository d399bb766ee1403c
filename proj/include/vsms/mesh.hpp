#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "vsms/error.hpp"

namespace vsms {

using Point = Eigen::Vector2d;

/// Uniform rectangular grid of bilinear cells.
///
/// Nodes are numbered lexicographically with x fastest: node (i, j) has index
/// j * (nx + 1) + i. Cells follow the same convention, cell (i, j) has index
/// j * nx + i. The local node order inside a cell is (i,j), (i+1,j), (i,j+1),
/// (i+1,j+1). The same type describes the global mesh on [0,1]^2 and the
/// local patches of coarse neighborhoods (non-zero origin).
class FineMesh {
 public:
  FineMesh() = default;

  FineMesh(int nx, int ny, double hx, double hy, Point origin = Point::Zero())
      : nx_(nx), ny_(ny), hx_(hx), hy_(hy), origin_(origin) {
    if (nx < 1 || ny < 1) throw Error(ErrorKind::invalid_dimension, "mesh needs at least one cell per axis");
    if (!(hx > 0.0) || !(hy > 0.0)) throw Error(ErrorKind::invalid_dimension, "mesh spacing must be positive");
    boundary_flag_.assign(num_nodes(), 0);
    for (int j = 0; j <= ny_; ++j) {
      for (int i = 0; i <= nx_; ++i) {
        if (i == 0 || j == 0 || i == nx_ || j == ny_) {
          boundary_flag_[node(i, j)] = 1;
          boundary_nodes_.push_back(node(i, j));
        } else {
          interior_nodes_.push_back(node(i, j));
        }
      }
    }
  }

  int nx() const noexcept { return nx_; }
  int ny() const noexcept { return ny_; }
  double hx() const noexcept { return hx_; }
  double hy() const noexcept { return hy_; }
  double cell_area() const noexcept { return hx_ * hy_; }
  const Point& origin() const noexcept { return origin_; }

  int num_nodes() const noexcept { return (nx_ + 1) * (ny_ + 1); }
  int num_cells() const noexcept { return nx_ * ny_; }

  int node(int i, int j) const noexcept { return j * (nx_ + 1) + i; }
  int cell(int i, int j) const noexcept { return j * nx_ + i; }

  std::array<int, 4> cell_nodes(int c) const noexcept {
    const int i = c % nx_;
    const int j = c / nx_;
    const int n0 = node(i, j);
    return {n0, n0 + 1, n0 + nx_ + 1, n0 + nx_ + 2};
  }

  Point node_coord(int n) const noexcept {
    const int i = n % (nx_ + 1);
    const int j = n / (nx_ + 1);
    return origin_ + Point(i * hx_, j * hy_);
  }

  Point cell_center(int c) const noexcept {
    const int i = c % nx_;
    const int j = c / nx_;
    return origin_ + Point((i + 0.5) * hx_, (j + 0.5) * hy_);
  }

  bool is_boundary(int n) const noexcept { return boundary_flag_[n] != 0; }
  /// Boundary nodes in increasing index order.
  const std::vector<int>& boundary_nodes() const noexcept { return boundary_nodes_; }
  /// Interior nodes in increasing index order.
  const std::vector<int>& interior_nodes() const noexcept { return interior_nodes_; }

  Point upper() const noexcept { return origin_ + Point(nx_ * hx_, ny_ * hy_); }

 private:
  int nx_ = 0;
  int ny_ = 0;
  double hx_ = 0.0;
  double hy_ = 0.0;
  Point origin_ = Point::Zero();
  std::vector<char> boundary_flag_;
  std::vector<int> boundary_nodes_;
  std::vector<int> interior_nodes_;
};

/// Uniform nx-by-ny mesh of the unit square.
inline FineMesh build_fine_mesh(int nx, int ny) {
  if (nx < 2 || ny < 2) throw Error(ErrorKind::invalid_dimension, "fine mesh needs nx, ny >= 2");
  return FineMesh(nx, ny, 1.0 / nx, 1.0 / ny);
}

/// Row-per-point interpolation weights (four nodes per point), so repeated
/// sampling of many fields reduces to small dot products.
struct PointSampler {
  std::vector<std::array<int, 4>> nodes;
  std::vector<std::array<double, 4>> weights;

  double sample(std::size_t k, const Eigen::VectorXd& field) const {
    double v = 0.0;
    for (int a = 0; a < 4; ++a) v += weights[k][a] * field[nodes[k][a]];
    return v;
  }
  std::size_t size() const noexcept { return nodes.size(); }
};

inline PointSampler make_point_sampler(const FineMesh& mesh, std::span<const Point> points) {
  PointSampler s;
  for (const Point& p : points) {
    const double sx = (p.x() - mesh.origin().x()) / mesh.hx();
    const double sy = (p.y() - mesh.origin().y()) / mesh.hy();
    if (sx < -1e-12 || sy < -1e-12 || sx > mesh.nx() + 1e-12 || sy > mesh.ny() + 1e-12)
      throw Error(ErrorKind::out_of_domain, "sampling point outside mesh");
    const int i = std::clamp(static_cast<int>(std::floor(sx)), 0, mesh.nx() - 1);
    const int j = std::clamp(static_cast<int>(std::floor(sy)), 0, mesh.ny() - 1);
    const double tx = std::clamp(sx - i, 0.0, 1.0);
    const double ty = std::clamp(sy - j, 0.0, 1.0);
    s.nodes.push_back(mesh.cell_nodes(mesh.cell(i, j)));
    s.weights.push_back({(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty});
  }
  return s;
}

/// Bilinear interpolation of a nodal field. Points on a cell face belong to
/// the lower-index cell; the upper domain edge belongs to the last cell.
inline Eigen::VectorXd interpolate_at_points(const FineMesh& mesh, const Eigen::VectorXd& field,
                                             std::span<const Point> points) {
  if (field.size() != mesh.num_nodes())
    throw Error(ErrorKind::invalid_dimension, "nodal field length does not match mesh");
  const PointSampler sampler = make_point_sampler(mesh, points);
  Eigen::VectorXd out(static_cast<Eigen::Index>(points.size()));
  for (std::size_t k = 0; k < sampler.size(); ++k) out[static_cast<Eigen::Index>(k)] = sampler.sample(k, field);
  return out;
}

}  // namespace vsms
