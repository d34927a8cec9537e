#pragma once

#include "linbayes/core.hpp"
#include "linbayes/mesh.hpp"

#include <Eigen/Core>

#include <cmath>
#include <type_traits>
#include <variant>

namespace linbayes {

using Tensor2 = Eigen::Matrix2d;

struct IsotropicTheta {
  double beta = 1.0;
};

/// Theta(x) = beta (I - theta(x) x x^T), anisotropy strongest near ||x|| = radius.
struct RadialAnisotropicTheta {
  double beta = 1.0;
  double theta = 1.0;
  double radius = 1.0;
};

using ThetaSpec = std::variant<IsotropicTheta, RadialAnisotropicTheta>;

/// Radial-anisotropy tensor at x (2D restriction of the spherical formula).
///
/// The scalar weight is theta(x) = (1 - theta) / (r ||x||^2) * (2 ||x|| - ||x||^2 / r),
/// and zero at the origin, so the radial eigenvalue drops from beta at the
/// centre to beta * theta on the sphere ||x|| = r.
inline Tensor2 theta_radial_eval(const Point& x, double beta, double theta, double radius) {
  if (!(beta > 0.0))
    throw InvalidArgument("theta tensor: beta must be positive");
  if (!(theta > 0.0 && theta <= 1.0))
    throw InvalidArgument("theta tensor: theta must lie in (0, 1]");
  if (!(radius > 0.0))
    throw InvalidArgument("theta tensor: radius must be positive");
  const double norm = std::hypot(x[0], x[1]);
  if (norm > radius * (1.0 + 1e-12))
    throw InvalidArgument("theta tensor: point outside the modelled ball");
  Tensor2 out = beta * Tensor2::Identity();
  if (norm == 0.0)
    return out;
  const double weight = (1.0 - theta) / (radius * norm * norm) * (2.0 * norm - norm * norm / radius);
  Eigen::Vector2d xv(x[0], x[1]);
  out -= beta * weight * (xv * xv.transpose());
  return out;
}

/// Theta evaluated at a quadrature point, as a dim x dim block of a 2x2 tensor.
/// In 1D every variant degenerates to the scalar beta.
inline Tensor2 evaluate_theta(const ThetaSpec& spec, const Point& x, int dim) {
  Tensor2 t = std::visit(
      [&](const auto& s) -> Tensor2 {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IsotropicTheta>) {
          if (!(s.beta > 0.0))
            throw InvalidArgument("theta tensor: beta must be positive");
          return s.beta * Tensor2::Identity();
        } else {
          if (dim == 1) {
            if (!(s.beta > 0.0))
              throw InvalidArgument("theta tensor: beta must be positive");
            return s.beta * Tensor2::Identity();
          }
          return theta_radial_eval(x, s.beta, s.theta, s.radius);
        }
      },
      spec);
  if (dim == 1) {
    t(0, 1) = t(1, 0) = 0.0;
    t(1, 1) = 0.0;
    if (!(t(0, 0) > 0.0))
      throw InvalidArgument("theta tensor is not positive definite");
    return t;
  }
  // SPD check for a symmetric 2x2 tensor.
  if (!(t(0, 0) > 0.0 && t.determinant() > 0.0))
    throw InvalidArgument("theta tensor is not positive definite at a quadrature point");
  return t;
}

} // namespace linbayes
