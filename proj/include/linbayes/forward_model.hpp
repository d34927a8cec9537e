#pragma once

#include "linbayes/mspace.hpp"

#include <cstdint>
#include <memory>
#include <random>

namespace linbayes {

/// Gamma_noise = sigma^2 I.
struct GaussianNoise {
  double sigma = 1.0;

  Vector apply_inverse(const Vector& r) const { return r / (sigma * sigma); }
  double misfit(const Vector& r) const { return 0.5 * r.squaredNorm() / (sigma * sigma); }
};

/// State of a forward model frozen at one parameter point: supports the
/// Jacobian F and its Euclidean transpose without recomputing the forward solve.
/// Read-only after construction, so concurrent actions are safe.
class Linearization {
public:
  virtual ~Linearization() = default;

  virtual const Vector& point() const = 0;
  /// f(point)
  virtual const Vector& observed() const = 0;
  /// F dm
  virtual Vector apply_jacobian(const Vector& dm) const = 0;
  /// F^T dy (Euclidean transpose; the M-adjoint is M^{-1} F^T)
  virtual Vector apply_jacobian_transpose(const Vector& dy) const = 0;
};

/// Parameter-to-observable map f : R^n_M -> R^q.
class ForwardModel {
public:
  virtual ~ForwardModel() = default;

  virtual Index parameter_dim() const = 0;
  virtual Index observation_dim() const = 0;
  virtual Vector observe(const Vector& m) const = 0;
  virtual std::shared_ptr<const Linearization> linearize(const Vector& m) const = 0;
};

using LinearizationPtr = std::shared_ptr<const Linearization>;

namespace detail {
inline const Linearization& require_linearization(const LinearizationPtr& lin) {
  if (!lin)
    throw PreconditionViolation("forward model has not been linearized at this point");
  return *lin;
}
} // namespace detail

/// y_obs = f(m_true) + sigma xi with xi drawn from a seeded stream.
inline Vector synthesize_data(const ForwardModel& model, const Vector& m_true, double noise_sigma,
                              std::uint64_t seed) {
  if (!(noise_sigma >= 0.0))
    throw InvalidArgument("synthesize_data: noise_sigma must be nonnegative");
  Vector y = model.observe(m_true);
  if (noise_sigma == 0.0)
    return y;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < y.size(); ++i)
    y[i] += noise_sigma * normal(rng);
  return y;
}

inline Vector apply_F(const LinearizationPtr& lin, const Vector& dm) {
  return detail::require_linearization(lin).apply_jacobian(dm);
}

/// F* dy = M^{-1} F^T dy.
inline Vector apply_Fstar(const LinearizationPtr& lin, const Vector& dy, const MSpace& ms) {
  const Linearization& l = detail::require_linearization(lin);
  return adjoint_apply(
      MapKind::parameter_to_data, [&](const Vector& w) -> Vector { return l.apply_jacobian_transpose(w); }, dy, ms);
}

/// M-gradient of 1/2 ||f(m) - y_obs||^2_{Gamma_noise^{-1}}: F* Gamma_noise^{-1} (f(m) - y_obs).
inline Vector misfit_gradient(const LinearizationPtr& lin, const Vector& y_obs, const GaussianNoise& noise,
                              const MSpace& ms) {
  const Linearization& l = detail::require_linearization(lin);
  require_dim("misfit_gradient y_obs", l.observed().size(), y_obs.size());
  return apply_Fstar(lin, noise.apply_inverse(l.observed() - y_obs), ms);
}

/// Gauss-Newton misfit Hessian action F* Gamma_noise^{-1} F dm.
inline Vector misfit_gn_hessian_action(const LinearizationPtr& lin, const Vector& dm, const GaussianNoise& noise,
                                       const MSpace& ms) {
  return apply_Fstar(lin, noise.apply_inverse(apply_F(lin, dm)), ms);
}

/// f(m) = G m. The linearization is exact and independent of m.
class LinearMapModel final : public ForwardModel {
public:
  explicit LinearMapModel(Matrix g) : g_(std::make_shared<const Matrix>(std::move(g))) {}

  const Matrix& matrix() const noexcept { return *g_; }
  Index parameter_dim() const override { return g_->cols(); }
  Index observation_dim() const override { return g_->rows(); }

  Vector observe(const Vector& m) const override {
    require_dim("LinearMapModel::observe", parameter_dim(), m.size());
    return *g_ * m;
  }

  LinearizationPtr linearize(const Vector& m) const override {
    require_dim("LinearMapModel::linearize", parameter_dim(), m.size());
    return std::make_shared<const Lin>(g_, m, *g_ * m);
  }

private:
  class Lin final : public Linearization {
  public:
    Lin(std::shared_ptr<const Matrix> g, Vector m, Vector y) : g_(std::move(g)), m_(std::move(m)), y_(std::move(y)) {}
    const Vector& point() const override { return m_; }
    const Vector& observed() const override { return y_; }
    Vector apply_jacobian(const Vector& dm) const override {
      require_dim("LinearMapModel::apply_F", g_->cols(), dm.size());
      return *g_ * dm;
    }
    Vector apply_jacobian_transpose(const Vector& dy) const override {
      require_dim("LinearMapModel::apply_Ft", g_->rows(), dy.size());
      return g_->transpose() * dy;
    }

  private:
    std::shared_ptr<const Matrix> g_;
    Vector m_;
    Vector y_;
  };

  std::shared_ptr<const Matrix> g_;
};

} // namespace linbayes
