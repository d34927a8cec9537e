#pragma once

#include "linbayes/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace linbayes {

using Point = std::array<double, 2>;

struct Box {
  Point lower{0.0, 0.0};
  Point upper{1.0, 1.0};
};

/// Nonzero entries of the basis-evaluation vector Phi(x): (node, phi_node(x)).
struct BasisEval {
  std::array<Index, 4> nodes{};
  std::array<double, 4> weights{};
  int count = 0;

  Vector dense(Index n) const {
    Vector phi = Vector::Zero(n);
    for (int a = 0; a < count; ++a)
      phi[nodes[a]] += weights[a];
    return phi;
  }

  double dot(const Vector& v) const {
    double s = 0.0;
    for (int a = 0; a < count; ++a)
      s += weights[a] * v[nodes[a]];
    return s;
  }
};

/// Uniform tensor-product mesh of (bi)linear Lagrange elements on an interval or rectangle.
///
/// Nodes are numbered lexicographically with x fastest: node (i, j) has index
/// j * (nx + 1) + i. Quad connectivity is counter-clockwise starting at the
/// lower-left corner; segment connectivity is (left, right).
class Mesh {
public:
  Mesh() = default;

  int dim() const noexcept { return dim_; }
  Index num_nodes() const noexcept { return static_cast<Index>(coords_.size()); }
  Index num_elements() const noexcept {
    return static_cast<Index>(connectivity_.size()) / nodes_per_element();
  }
  int nodes_per_element() const noexcept { return dim_ == 1 ? 2 : 4; }
  const std::array<Index, 2>& counts() const noexcept { return counts_; }
  const Box& box() const noexcept { return box_; }
  const std::vector<Point>& node_coords() const noexcept { return coords_; }
  const Point& node(Index i) const { return coords_[static_cast<std::size_t>(i)]; }

  std::span<const Index> element(Index k) const {
    const auto npe = static_cast<std::size_t>(nodes_per_element());
    return {connectivity_.data() + static_cast<std::size_t>(k) * npe, npe};
  }

  double spacing(int axis) const {
    return (box_.upper[axis] - box_.lower[axis]) / static_cast<double>(counts_[axis]);
  }

  double measure() const {
    double m = box_.upper[0] - box_.lower[0];
    if (dim_ == 2)
      m *= box_.upper[1] - box_.lower[1];
    return m;
  }

  bool contains(const Point& x, double tol = 1e-12) const {
    for (int a = 0; a < dim_; ++a) {
      const double len = box_.upper[a] - box_.lower[a];
      if (x[a] < box_.lower[a] - tol * len || x[a] > box_.upper[a] + tol * len)
        return false;
    }
    return true;
  }

  /// Phi(x): values of all basis functions at x (at most 2^dim nonzeros).
  BasisEval evaluate_basis(const Point& x) const {
    if (!contains(x))
      throw InvalidArgument("point outside the mesh domain");
    BasisEval out;
    std::array<Index, 2> cell{0, 0};
    std::array<double, 2> local{0.0, 0.0};
    for (int a = 0; a < dim_; ++a) {
      const double h = spacing(a);
      double s = (x[a] - box_.lower[a]) / h;
      Index c = static_cast<Index>(std::floor(s));
      c = std::clamp<Index>(c, 0, counts_[a] - 1);
      cell[a] = c;
      local[a] = std::clamp(s - static_cast<double>(c), 0.0, 1.0);
    }
    if (dim_ == 1) {
      out.count = 2;
      out.nodes = {cell[0], cell[0] + 1, 0, 0};
      out.weights = {1.0 - local[0], local[0], 0.0, 0.0};
      return out;
    }
    const Index stride = counts_[0] + 1;
    const Index base = cell[1] * stride + cell[0];
    const double u = local[0], v = local[1];
    out.count = 4;
    out.nodes = {base, base + 1, base + stride + 1, base + stride};
    out.weights = {(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v};
    return out;
  }

  /// Index of the node nearest to x.
  Index nearest_node(const Point& x) const {
    Index best = 0;
    double best_d = INFINITY;
    for (Index i = 0; i < num_nodes(); ++i) {
      double d = 0.0;
      for (int a = 0; a < dim_; ++a)
        d += (coords_[i][a] - x[a]) * (coords_[i][a] - x[a]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  bool on_boundary(Index node_index) const {
    const Index nx = counts_[0] + 1;
    const Index i = node_index % nx;
    if (i == 0 || i == counts_[0])
      return true;
    if (dim_ == 2) {
      const Index j = node_index / nx;
      return j == 0 || j == counts_[1];
    }
    return false;
  }

  friend Mesh build_mesh(int dim, std::array<Index, 2> counts, Box box);

private:
  int dim_ = 1;
  std::array<Index, 2> counts_{1, 0};
  Box box_{};
  std::vector<Point> coords_;
  std::vector<Index> connectivity_;
};

/// Uniform mesh with counts[a] elements along axis a (counts[1] ignored in 1D).
inline Mesh build_mesh(int dim, std::array<Index, 2> counts, Box box) {
  if (dim != 1 && dim != 2)
    throw InvalidArgument("mesh dimension must be 1 or 2");
  for (int a = 0; a < dim; ++a) {
    if (counts[a] < 1)
      throw InvalidArgument("element count per axis must be >= 1");
    if (!(box.upper[a] > box.lower[a]))
      throw InvalidArgument("mesh box is degenerate or inverted");
  }
  Mesh m;
  m.dim_ = dim;
  m.box_ = box;
  if (dim == 1) {
    m.counts_ = {counts[0], 0};
    m.box_.lower[1] = m.box_.upper[1] = 0.0;
  } else {
    m.counts_ = counts;
  }
  const Index nx = m.counts_[0] + 1;
  const Index ny = dim == 2 ? m.counts_[1] + 1 : 1;
  m.coords_.reserve(static_cast<std::size_t>(nx * ny));
  for (Index j = 0; j < ny; ++j) {
    for (Index i = 0; i < nx; ++i) {
      Point p{box.lower[0] + (box.upper[0] - box.lower[0]) * static_cast<double>(i) /
                                 static_cast<double>(m.counts_[0]),
              0.0};
      if (dim == 2)
        p[1] = box.lower[1] +
               (box.upper[1] - box.lower[1]) * static_cast<double>(j) / static_cast<double>(m.counts_[1]);
      m.coords_.push_back(p);
    }
  }
  if (dim == 1) {
    for (Index k = 0; k < m.counts_[0]; ++k) {
      m.connectivity_.push_back(k);
      m.connectivity_.push_back(k + 1);
    }
  } else {
    for (Index j = 0; j < m.counts_[1]; ++j) {
      for (Index i = 0; i < m.counts_[0]; ++i) {
        const Index b = j * nx + i;
        m.connectivity_.insert(m.connectivity_.end(), {b, b + 1, b + nx + 1, b + nx});
      }
    }
  }
  return m;
}

inline Mesh build_mesh_1d(Index count, double lower, double upper) {
  return build_mesh(1, {count, 0}, Box{{lower, 0.0}, {upper, 0.0}});
}

} // namespace linbayes
