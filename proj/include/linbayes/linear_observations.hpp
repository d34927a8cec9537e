#pragma once

#include "linbayes/forward_model.hpp"
#include "linbayes/mesh.hpp"

#include <cmath>
#include <vector>

namespace linbayes {

/// G for f(m) = G m where row i is a unit-mass Gaussian average of m around
/// points[i]: G_ij = int k_i phi_j, with k_i interpolated on the mesh.
inline Matrix make_kernel_average_map(const Mesh& mesh, const MSpace& ms, const std::vector<Point>& points,
                                      double width) {
  if (!(width > 0.0))
    throw InvalidArgument("kernel width must be positive");
  Matrix g(static_cast<Index>(points.size()), mesh.num_nodes());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!mesh.contains(points[i]))
      throw InvalidArgument("observation point outside the mesh domain");
    Vector k(mesh.num_nodes());
    for (Index j = 0; j < mesh.num_nodes(); ++j) {
      double d2 = 0.0;
      for (int a = 0; a < mesh.dim(); ++a)
        d2 += (mesh.node(j)[a] - points[i][a]) * (mesh.node(j)[a] - points[i][a]);
      k[j] = std::exp(-0.5 * d2 / (width * width));
    }
    const Vector mk = ms.apply(k);
    g.row(static_cast<Index>(i)) = mk.transpose() / mk.sum();
  }
  return g;
}

} // namespace linbayes
