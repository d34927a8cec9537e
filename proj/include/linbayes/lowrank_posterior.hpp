#pragma once

#include "linbayes/forward_model.hpp"
#include "linbayes/lanczos.hpp"
#include "linbayes/prior.hpp"

#include <memory>
#include <span>

namespace linbayes {

/// H_tilde v = Gamma_prior^{1/2} H_misfit Gamma_prior^{1/2} v, M-self-adjoint and PSD.
inline Vector apply_prior_preconditioned_hessian(const PriorModel& prior, const LinearizationPtr& lin,
                                                 const GaussianNoise& noise, const Vector& v) {
  const Vector s = apply_gamma_prior_sqrt(prior, v);
  return apply_gamma_prior_sqrt(prior, misfit_gn_hessian_action(lin, s, noise, prior.mspace()));
}

/// Lanczos on the prior-preconditioned misfit Hessian at a linearization point.
inline EigenDecomposition prior_preconditioned_eigs(const PriorModel& prior, const LinearizationPtr& lin,
                                                    const GaussianNoise& noise, const LanczosOptions& opts) {
  detail::require_linearization(lin);
  return lanczos_eigs([&](const Vector& v) { return apply_prior_preconditioned_hessian(prior, lin, noise, v); },
                      prior.mspace(), opts);
}

/// Gaussian approximation N(m_map, Gamma_post) with
/// Gamma_post = Gamma_prior - V_tilde D_r V_tilde^*, V_tilde = Gamma_prior^{1/2} V_r.
/// Immutable; shares the prior.
class LowRankPosterior {
public:
  LowRankPosterior(std::shared_ptr<const PriorModel> prior, Vector m_map, EigenDecomposition eig)
      : prior_(std::move(prior)), m_map_(std::move(m_map)), eig_(std::move(eig)) {
    require_dim("LowRankPosterior m_map", prior_->n(), m_map_.size());
    require_dim("LowRankPosterior eigenvectors", prior_->n(), eig_.V.rows());
    const Index r = eig_.rank();
    d_.resize(r);
    p_.resize(r);
    tilde_v_.resize(prior_->n(), r);
    for (Index k = 0; k < r; ++k) {
      const double lam = eig_.lambdas[k];
      d_[k] = lam / (lam + 1.0);
      p_[k] = 1.0 / std::sqrt(lam + 1.0) - 1.0;
    }
    parallel_for(r, [&](Index k) { tilde_v_.col(k) = apply_gamma_prior_sqrt(*prior_, eig_.V.col(k)); });
  }

  const PriorModel& prior() const noexcept { return *prior_; }
  const std::shared_ptr<const PriorModel>& prior_ptr() const noexcept { return prior_; }
  const Vector& m_map() const noexcept { return m_map_; }
  const EigenDecomposition& eig() const noexcept { return eig_; }
  Index rank() const noexcept { return eig_.rank(); }
  const Vector& d() const noexcept { return d_; }
  const Vector& p() const noexcept { return p_; }
  const Matrix& tilde_v() const noexcept { return tilde_v_; }

private:
  std::shared_ptr<const PriorModel> prior_;
  Vector m_map_;
  EigenDecomposition eig_;
  Vector d_;
  Vector p_;
  Matrix tilde_v_;
};

/// Gamma_post v = Gamma_prior v - V_tilde D_r (V_tilde^T M v).
inline Vector apply_gamma_post(const LowRankPosterior& lrp, const Vector& v) {
  const PriorModel& prior = lrp.prior();
  Vector out = apply_gamma_prior(prior, v);
  if (lrp.rank() > 0) {
    const Vector coeff = lrp.tilde_v().transpose() * prior.mspace().apply(v);
    out -= lrp.tilde_v() * lrp.d().cwiseProduct(coeff);
  }
  return out;
}

/// Posterior sampling factor L = Gamma_prior^{1/2} (V_r P_r V_r^* + I) M^{-1/2},
/// a map R^n -> R^n_M with L L^* = Gamma_post (L^* = L^T M).
/// Refers to `lrp`, which must outlive it.
class SamplingFactor {
public:
  SamplingFactor(const LowRankPosterior& lrp, MassSqrt mode) : lrp_(&lrp), mode_(mode) {}

  MassSqrt mode() const noexcept { return mode_; }

  Vector apply(const Vector& standard_normal) const {
    const PriorModel& prior = lrp_->prior();
    require_dim("SamplingFactor::apply", prior.n(), standard_normal.size());
    const Vector w = mass_sqrt_apply(prior.mspace(), standard_normal, -0.5, mode_);
    Vector inner = w;
    if (lrp_->rank() > 0) {
      const Matrix& V = lrp_->eig().V;
      const Vector coeff = V.transpose() * prior.mspace().apply(w);
      inner += V * lrp_->p().cwiseProduct(coeff);
    }
    return apply_gamma_prior_sqrt(prior, inner);
  }

private:
  const LowRankPosterior* lrp_;
  MassSqrt mode_;
};

inline SamplingFactor build_sampling_factor(const LowRankPosterior& lrp, MassSqrt mode = MassSqrt::lumped) {
  return SamplingFactor(lrp, mode);
}

/// m_map + L n_hat.
inline Vector sample_posterior(const LowRankPosterior& lrp, const Vector& standard_normal,
                               MassSqrt mode = MassSqrt::lumped) {
  return lrp.m_map() + build_sampling_factor(lrp, mode).apply(standard_normal);
}

/// Posterior covariance function Phi(x)^T Gamma_post M^{-1} Phi(y).
inline double posterior_covariance_function(const LowRankPosterior& lrp, const Point& x, const Point& y) {
  const PriorModel& prior = lrp.prior();
  return covariance_function(
      prior.mesh(), prior.mspace(), [&](const Vector& v) { return apply_gamma_post(lrp, v); }, x, y);
}

struct PosteriorVariance {
  Vector values;
  Index clamped = 0; ///< points where round-off drove the value below zero
};

/// c_post(x, x) = c_prior(x, x) - sum_k d_k (Phi(x)^T v_tilde_k)^2, clamped at 0.
inline PosteriorVariance posterior_pointwise_variance(const LowRankPosterior& lrp, std::span<const Point> points) {
  const PriorModel& prior = lrp.prior();
  PosteriorVariance out{prior_pointwise_variance(prior, points), 0};
  for (std::size_t i = 0; i < points.size(); ++i) {
    const BasisEval phi = prior.mesh().evaluate_basis(points[i]);
    double reduction = 0.0;
    for (Index k = 0; k < lrp.rank(); ++k) {
      double val = 0.0;
      for (int a = 0; a < phi.count; ++a)
        val += phi.weights[a] * lrp.tilde_v()(phi.nodes[a], k);
      reduction += lrp.d()[k] * val * val;
    }
    double& v = out.values[static_cast<Index>(i)];
    v -= reduction;
    if (v < 0.0) {
      v = 0.0;
      ++out.clamped;
    }
  }
  return out;
}

inline PosteriorVariance posterior_pointwise_variance(const LowRankPosterior& lrp) {
  return posterior_pointwise_variance(lrp, lrp.prior().mesh().node_coords());
}

} // namespace linbayes
