#pragma once

#include "linbayes/assembly.hpp"
#include "linbayes/mesh.hpp"
#include "linbayes/mspace.hpp"
#include "linbayes/parallel.hpp"

#include <span>
#include <vector>

namespace linbayes {

/// Gaussian prior N(m0, Gamma_prior) with Gamma_prior = A^{-2}, A = M^{-1} K.
///
/// Every covariance action is realized through solves with K and M; no dense
/// covariance is formed. Immutable after construction.
class PriorModel {
public:
  PriorModel(Mesh mesh, MSpace mspace, double alpha, ThetaSpec theta, Vector mean, SolverOptions opts = {})
      : mesh_(std::move(mesh)), mspace_(std::move(mspace)), alpha_(alpha), theta_(theta),
        stiffness_(assemble_prior_stiffness(mesh_, alpha, theta), opts), mean_(std::move(mean)) {
    require_dim("prior mean", mspace_.n(), mean_.size());
    require_dim("prior mesh", mspace_.n(), mesh_.num_nodes());
  }

  /// Convenience: assembles M and K on `mesh`.
  static PriorModel build(const Mesh& mesh, double alpha, const ThetaSpec& theta, Vector mean,
                          SolverOptions opts = {}, bool exact_mass_sqrt = false) {
    MSpace ms(assemble_mass(mesh), opts, exact_mass_sqrt);
    return PriorModel(mesh, std::move(ms), alpha, theta, std::move(mean), opts);
  }

  Index n() const noexcept { return mspace_.n(); }
  const Mesh& mesh() const noexcept { return mesh_; }
  const MSpace& mspace() const noexcept { return mspace_; }
  const SparseSymMatrix& stiffness() const { return stiffness_.matrix(); }
  const Vector& mean() const noexcept { return mean_; }
  double alpha() const noexcept { return alpha_; }
  const ThetaSpec& theta() const noexcept { return theta_; }

  Vector solve_stiffness(const Vector& b) const { return stiffness_.solve(b); }

private:
  Mesh mesh_;
  MSpace mspace_;
  double alpha_;
  ThetaSpec theta_;
  SpdSolver stiffness_;
  Vector mean_;
};

/// Gamma_prior^{1/2} v = A^{-1} v = K^{-1} M v.
inline Vector apply_gamma_prior_sqrt(const PriorModel& prior, const Vector& v) {
  require_dim("apply_gamma_prior_sqrt", prior.n(), v.size());
  return prior.solve_stiffness(prior.mspace().apply(v));
}

/// Gamma_prior v = K^{-1} M K^{-1} M v.
inline Vector apply_gamma_prior(const PriorModel& prior, const Vector& v) {
  return apply_gamma_prior_sqrt(prior, apply_gamma_prior_sqrt(prior, v));
}

/// A v = M^{-1} K v.
inline Vector apply_prior_precision_root(const PriorModel& prior, const Vector& v) {
  require_dim("apply_prior_precision_root", prior.n(), v.size());
  return prior.mspace().solve(prior.stiffness().apply(v));
}

/// Gamma_prior^{-1} v = M^{-1} K M^{-1} K v.
inline Vector apply_gamma_prior_inv(const PriorModel& prior, const Vector& v) {
  return apply_prior_precision_root(prior, apply_prior_precision_root(prior, v));
}

/// -1/2 ||A (m - m0)||_M^2, the unnormalized log prior density.
inline double log_prior_density_unnormalized(const PriorModel& prior, const Vector& m) {
  require_dim("log_prior_density_unnormalized", prior.n(), m.size());
  const Vector d = m - prior.mean();
  const Vector kd = prior.stiffness().apply(d);
  return -0.5 * kd.dot(prior.mspace().solve(kd));
}

/// m0 + K^{-1} M^{1/2} n_hat for a caller-supplied standard normal vector.
inline Vector sample_prior(const PriorModel& prior, const Vector& standard_normal,
                           MassSqrt mode = MassSqrt::lumped) {
  require_dim("sample_prior", prior.n(), standard_normal.size());
  return prior.mean() + prior.solve_stiffness(mass_sqrt_apply(prior.mspace(), standard_normal, 0.5, mode));
}

/// c_h(x, y) = Phi(x)^T Gamma M^{-1} Phi(y) for any M-self-adjoint covariance action.
template <typename GammaAction>
double covariance_function(const Mesh& mesh, const MSpace& ms, GammaAction&& gamma, const Point& x,
                           const Point& y) {
  const BasisEval phi_x = mesh.evaluate_basis(x);
  const Vector phi_y = mesh.evaluate_basis(y).dense(mesh.num_nodes());
  const Vector col = gamma(ms.solve(phi_y));
  return phi_x.dot(col);
}

/// Prior covariance function Phi(x)^T K^{-1} M K^{-1} Phi(y).
inline double prior_covariance_function(const PriorModel& prior, const Point& x, const Point& y) {
  const Mesh& mesh = prior.mesh();
  const Vector wx = prior.solve_stiffness(mesh.evaluate_basis(x).dense(mesh.num_nodes()));
  const Vector wy = prior.solve_stiffness(mesh.evaluate_basis(y).dense(mesh.num_nodes()));
  return prior.mspace().inner(wx, wy);
}

/// Pointwise prior variance: w = K^{-1} Phi(x), value w^T M w (one solve per point).
inline Vector prior_pointwise_variance(const PriorModel& prior, std::span<const Point> points) {
  const Mesh& mesh = prior.mesh();
  Vector out(static_cast<Index>(points.size()));
  for (const Point& p : points)
    if (!mesh.contains(p))
      throw InvalidArgument("prior_pointwise_variance: point outside the mesh domain");
  parallel_for(static_cast<Index>(points.size()), [&](Index i) {
    const Vector w = prior.solve_stiffness(mesh.evaluate_basis(points[static_cast<std::size_t>(i)]).dense(mesh.num_nodes()));
    out[i] = prior.mspace().inner(w, w);
  });
  return out;
}

inline Vector prior_pointwise_variance(const PriorModel& prior) {
  return prior_pointwise_variance(prior, prior.mesh().node_coords());
}

} // namespace linbayes
