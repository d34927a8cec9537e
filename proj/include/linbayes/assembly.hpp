#pragma once

#include "linbayes/mesh.hpp"
#include "linbayes/sparse.hpp"
#include "linbayes/theta.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace linbayes {

namespace detail {

/// Reference-element data at one quadrature point: shape values, physical
/// gradients, physical location and weight (including the Jacobian).
struct QuadPoint {
  std::array<double, 4> phi{};
  std::array<std::array<double, 2>, 4> grad{};
  Point x{};
  double weight = 0.0;
};

/// 2-point Gauss rule per axis on one element of a uniform mesh.
inline std::vector<QuadPoint> element_quadrature(const Mesh& mesh, Index k) {
  static constexpr double g = 0.57735026918962576451; // 1/sqrt(3)
  static constexpr std::array<double, 2> ref{0.5 * (1.0 - g), 0.5 * (1.0 + g)};
  const auto nodes = mesh.element(k);
  const Point& origin = mesh.node(nodes[0]);
  const double hx = mesh.spacing(0);
  std::vector<QuadPoint> out;
  if (mesh.dim() == 1) {
    for (double s : ref) {
      QuadPoint q;
      q.phi = {1.0 - s, s, 0.0, 0.0};
      q.grad[0] = {-1.0 / hx, 0.0};
      q.grad[1] = {1.0 / hx, 0.0};
      q.x = {origin[0] + s * hx, 0.0};
      q.weight = 0.5 * hx;
      out.push_back(q);
    }
    return out;
  }
  const double hy = mesh.spacing(1);
  for (double t : ref) {
    for (double s : ref) {
      QuadPoint q;
      q.phi = {(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t};
      q.grad[0] = {-(1 - t) / hx, -(1 - s) / hy};
      q.grad[1] = {(1 - t) / hx, -s / hy};
      q.grad[2] = {t / hx, s / hy};
      q.grad[3] = {-t / hx, (1 - s) / hy};
      q.x = {origin[0] + s * hx, origin[1] + t * hy};
      q.weight = 0.25 * hx * hy;
      out.push_back(q);
    }
  }
  return out;
}

template <typename ElementKernel>
SparseSymMatrix assemble(const Mesh& mesh, ElementKernel&& kernel) {
  const int npe = mesh.nodes_per_element();
  std::vector<Eigen::Triplet<double, Index>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.num_elements() * npe * npe));
  for (Index k = 0; k < mesh.num_elements(); ++k) {
    const auto nodes = mesh.element(k);
    double local[4][4] = {};
    for (const QuadPoint& q : element_quadrature(mesh, k))
      for (int a = 0; a < npe; ++a)
        for (int b = 0; b < npe; ++b)
          local[a][b] += q.weight * kernel(q, a, b);
    // Symmetrize at element level so stored values are exactly symmetric.
    for (int a = 0; a < npe; ++a)
      for (int b = 0; b < npe; ++b)
        triplets.emplace_back(nodes[a], nodes[b], 0.5 * (local[a][b] + local[b][a]));
  }
  SparseMatrix m(mesh.num_nodes(), mesh.num_nodes());
  m.setFromTriplets(triplets.begin(), triplets.end());
  return SparseSymMatrix(std::move(m));
}

} // namespace detail

/// Consistent mass matrix M_ij = int phi_i phi_j.
inline SparseSymMatrix assemble_mass(const Mesh& mesh) {
  return detail::assemble(mesh, [](const detail::QuadPoint& q, int a, int b) { return q.phi[a] * q.phi[b]; });
}

/// Prior stiffness K_ij = alpha int (Theta grad phi_i) . grad phi_j + phi_i phi_j
/// (natural Neumann boundary). Theta is sampled at each quadrature point.
inline SparseSymMatrix assemble_prior_stiffness(const Mesh& mesh, double alpha, const ThetaSpec& theta) {
  if (!(alpha > 0.0))
    throw InvalidArgument("prior stiffness: alpha must be positive");
  const int dim = mesh.dim();
  return detail::assemble(mesh, [&](const detail::QuadPoint& q, int a, int b) {
    const Tensor2 t = evaluate_theta(theta, q.x, dim);
    double grad_term = 0.0;
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        grad_term += t(i, j) * q.grad[a][j] * q.grad[b][i];
    return alpha * (grad_term + q.phi[a] * q.phi[b]);
  });
}

} // namespace linbayes
