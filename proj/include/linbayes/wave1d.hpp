#pragma once

#include "linbayes/forward_model.hpp"
#include "linbayes/mesh.hpp"
#include "linbayes/observation.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace linbayes {

/// Gaussian-smoothed point force with a Gaussian time profile.
struct PointSource {
  double location = 0.2;
  double width = 0.02;
  double t_center = 0.15;
  double t_std = 0.05;
  double amplitude = 1.0;

  double time_profile(double t) const {
    const double s = (t - t_center) / t_std;
    return amplitude * std::exp(-0.5 * s * s);
  }
  double spatial_profile(double x) const {
    const double s = (x - location) / width;
    return std::exp(-0.5 * s * s) / (std::sqrt(2.0 * std::numbers::pi) * width);
  }
};

/// First-order acoustic system rho v_t - (rho c^2 e)_x = g, e_t - v_x = 0 on a
/// 1D mesh with e = 0 at both ends and zero initial state.
struct WaveConfig {
  Mesh mesh;
  Vector rho; ///< nodal density; empty means 1 everywhere
  double final_time = 0.8;
  Index steps = 400;
  double cfl = 0.5;
  PointSource source;

  double dt() const { return final_time / static_cast<double>(steps); }
  Vector density() const { return rho.size() == 0 ? Vector::Ones(mesh.num_nodes()) : rho; }
};

/// Nodal velocity (nodes x levels) and element dilatation (elements x levels);
/// column n holds time level n * dt. Adjoint histories use the same layout.
struct StateHistory {
  Matrix v;
  Matrix e;
  double dt = 0.0;

  Index steps() const { return v.cols() - 1; }
};

/// Adjoint solution plus the accumulated Euclidean gradient d/dc of the
/// functional whose observation-space derivative drove the sweep.
struct AdjointSolution {
  StateHistory adjoint;
  Vector c_gradient;
};

namespace detail {

/// Semi-discrete operator u' = A(c) u + s(t) on u = (v, e) and its derivatives.
class WaveOperator {
public:
  WaveOperator(const WaveConfig& cfg, const Vector& c) : dt_(cfg.dt()) {
    const Mesh& mesh = cfg.mesh;
    nodes_ = mesh.num_nodes();
    elems_ = mesh.num_elements();
    const Vector rho = cfg.density();
    require_dim("wave density", nodes_, rho.size());
    require_dim("wavespeed", nodes_, c.size());
    h_.resize(elems_);
    kappa_.resize(elems_);
    dkappa_.resize(elems_);
    Vector lumped = Vector::Zero(nodes_);
    for (Index k = 0; k < elems_; ++k) {
      const double h = mesh.node(k + 1)[0] - mesh.node(k)[0];
      h_[k] = h;
      lumped[k] += 0.5 * h;
      lumped[k + 1] += 0.5 * h;
      const double rho_bar = 0.5 * (rho[k] + rho[k + 1]);
      const double c_bar = 0.5 * (c[k] + c[k + 1]);
      kappa_[k] = rho_bar * c_bar * c_bar;
      dkappa_[k] = rho_bar * c_bar; // d kappa_k / d c_j for j in {k, k+1}
    }
    w_inv_ = (rho.cwiseProduct(lumped)).cwiseInverse();
    energy_v_ = rho.cwiseProduct(lumped);
    source_shape_.resize(nodes_);
    for (Index i = 0; i < nodes_; ++i)
      source_shape_[i] = cfg.source.spatial_profile(mesh.node(i)[0]) / rho[i];
    source_ = cfg.source;
  }

  Index nodes() const { return nodes_; }
  Index elements() const { return elems_; }
  Index size() const { return nodes_ + elems_; }
  double dt() const { return dt_; }

  void apply(const Vector& z, Vector& out) const {
    out.resize(size());
    for (Index i = 0; i < nodes_; ++i) {
      const double right = i < elems_ ? kappa_[i] * z[nodes_ + i] : 0.0;
      const double left = i > 0 ? kappa_[i - 1] * z[nodes_ + i - 1] : 0.0;
      out[i] = w_inv_[i] * (right - left);
    }
    for (Index k = 0; k < elems_; ++k)
      out[nodes_ + k] = (z[k + 1] - z[k]) / h_[k];
  }

  void apply_transpose(const Vector& lam, Vector& out) const {
    out.resize(size());
    for (Index i = 0; i < nodes_; ++i) {
      const double left = i > 0 ? lam[nodes_ + i - 1] / h_[i - 1] : 0.0;
      const double right = i < elems_ ? lam[nodes_ + i] / h_[i] : 0.0;
      out[i] = left - right;
    }
    for (Index k = 0; k < elems_; ++k)
      out[nodes_ + k] = -kappa_[k] * (w_inv_[k + 1] * lam[k + 1] - w_inv_[k] * lam[k]);
  }

  /// out += (dA/dkappa . dkappa) z
  void add_kappa_derivative(const Vector& dkappa, const Vector& z, Vector& out) const {
    for (Index i = 0; i < nodes_; ++i) {
      const double right = i < elems_ ? dkappa[i] * z[nodes_ + i] : 0.0;
      const double left = i > 0 ? dkappa[i - 1] * z[nodes_ + i - 1] : 0.0;
      out[i] += w_inv_[i] * (right - left);
    }
  }

  /// g += d(lam^T A z)/dkappa
  void add_kappa_gradient(const Vector& lam, const Vector& z, Vector& g) const {
    for (Index k = 0; k < elems_; ++k)
      g[k] += z[nodes_ + k] * (w_inv_[k] * lam[k] - w_inv_[k + 1] * lam[k + 1]);
  }

  Vector kappa_direction(const Vector& dc) const {
    Vector dk(elems_);
    for (Index k = 0; k < elems_; ++k)
      dk[k] = dkappa_[k] * (dc[k] + dc[k + 1]);
    return dk;
  }

  Vector c_gradient_from_kappa(const Vector& gk) const {
    Vector gc = Vector::Zero(nodes_);
    for (Index k = 0; k < elems_; ++k) {
      gc[k] += gk[k] * dkappa_[k];
      gc[k + 1] += gk[k] * dkappa_[k];
    }
    return gc;
  }

  void add_source(double t, Vector& out) const {
    const double tau = source_.time_profile(t);
    if (tau != 0.0)
      out.head(nodes_) += tau * source_shape_;
  }

  double source_norm(double t) const {
    return std::abs(source_.time_profile(t)) * source_shape_.cwiseAbs().maxCoeff();
  }

  double energy(const Vector& u) const {
    double e = 0.5 * (energy_v_.array() * u.head(nodes_).array().square()).sum();
    for (Index k = 0; k < elems_; ++k)
      e += 0.5 * h_[k] * kappa_[k] * u[nodes_ + k] * u[nodes_ + k];
    return e;
  }

  /// Forward RK4 stages z1..z4 from u at time t (with source).
  void stages(const Vector& u, double t, bool with_source, std::array<Vector, 4>& z, std::array<Vector, 4>& k) const {
    const double h = dt_;
    const std::array<double, 4> offset{0.0, 0.5 * h, 0.5 * h, h};
    z[0] = u;
    for (int s = 0; s < 4; ++s) {
      if (s > 0)
        z[s] = u + offset[s] * k[s - 1];
      apply(z[s], k[s]);
      if (with_source)
        add_source(t + offset[s], k[s]);
    }
  }

private:
  Index nodes_ = 0;
  Index elems_ = 0;
  double dt_ = 0.0;
  Vector h_, kappa_, dkappa_, w_inv_, energy_v_, source_shape_;
  PointSource source_;
};

/// Flags runaway growth relative to the total forcing injected so far.
class GrowthMonitor {
public:
  explicit GrowthMonitor(const char* what) : what_(what) {}
  void inject(double amount) { injected_ += amount; }
  void check(const Vector& u) const {
    const double norm = u.cwiseAbs().maxCoeff();
    if (!std::isfinite(norm) || norm > 1e6 * std::max(injected_, 1e-300))
      throw StabilityFailure(std::string(what_) + ": field norm grew beyond 1e6 times the injected forcing");
  }

private:
  const char* what_;
  double injected_ = 0.0;
};

inline StateHistory make_history(Index nodes, Index elems, Index steps, double dt) {
  return StateHistory{Matrix::Zero(nodes, steps + 1), Matrix::Zero(elems, steps + 1), dt};
}

inline Vector pack(const StateHistory& h, Index n) {
  Vector u(h.v.rows() + h.e.rows());
  u << h.v.col(n), h.e.col(n);
  return u;
}

inline void unpack(const Vector& u, StateHistory& h, Index n) {
  h.v.col(n) = u.head(h.v.rows());
  h.e.col(n) = u.tail(h.e.rows());
}

inline constexpr std::array<double, 4> kRkWeights{1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0};

} // namespace detail

/// Largest stable dt at the configured CFL number for wavespeed c.
inline double cfl_limit(const WaveConfig& cfg, const Vector& c) {
  return cfg.cfl * cfg.mesh.spacing(0) / c.maxCoeff();
}

/// Checks c > 0 (InvalidParameter) and the CFL bound (ConfigError).
inline void validate_wave_parameter(const WaveConfig& cfg, const Vector& c) {
  require_dim("wavespeed", cfg.mesh.num_nodes(), c.size());
  if (!c.allFinite() || c.minCoeff() <= 0.0)
    throw InvalidParameter("wavespeed must be strictly positive at every node");
  if (cfg.cfl <= 0.0 || cfg.cfl > 0.5)
    throw ConfigError("wave.cfl", "must lie in (0, 0.5]");
  if (cfg.dt() > cfl_limit(cfg, c) * (1.0 + 1e-12))
    throw ConfigError("wave.steps", "time step violates the CFL bound dt <= cfl * h / max(c)");
}

struct StepperOptions {
  bool enforce_cfl = true;
};

/// Forward solve from zero initial state.
inline StateHistory solve_forward(const WaveConfig& cfg, const Vector& c, StepperOptions opts = {}) {
  if (cfg.mesh.dim() != 1)
    throw InvalidArgument("wave model requires a 1D mesh");
  if (opts.enforce_cfl)
    validate_wave_parameter(cfg, c);
  const detail::WaveOperator op(cfg, c);
  const double h = op.dt();
  StateHistory hist = detail::make_history(op.nodes(), op.elements(), cfg.steps, h);
  detail::GrowthMonitor monitor("solve_forward");
  Vector u = Vector::Zero(op.size());
  std::array<Vector, 4> z, k;
  for (Index n = 0; n < cfg.steps; ++n) {
    const double t = static_cast<double>(n) * h;
    op.stages(u, t, true, z, k);
    for (int s = 0; s < 4; ++s)
      u += h * detail::kRkWeights[s] * k[s];
    monitor.inject(h * std::max({op.source_norm(t), op.source_norm(t + 0.5 * h), op.source_norm(t + h)}));
    monitor.check(u);
    detail::unpack(u, hist, n + 1);
  }
  return hist;
}

/// Tangent-linear (incremental forward) solve in direction dc about `forward`.
inline StateHistory solve_incremental_forward(const WaveConfig& cfg, const Vector& c, const StateHistory& forward,
                                              const Vector& dc) {
  require_dim("solve_incremental_forward direction", c.size(), dc.size());
  const detail::WaveOperator op(cfg, c);
  if (forward.steps() != cfg.steps)
    throw PreconditionViolation("incremental forward solve needs the matching forward history");
  const double h = op.dt();
  const Vector dkappa = op.kappa_direction(dc);
  StateHistory hist = detail::make_history(op.nodes(), op.elements(), cfg.steps, h);
  detail::GrowthMonitor monitor("solve_incremental_forward");
  Vector du = Vector::Zero(op.size());
  std::array<Vector, 4> z, k, dz, dk;
  const std::array<double, 4> offset{0.0, 0.5 * h, 0.5 * h, h};
  for (Index n = 0; n < cfg.steps; ++n) {
    const double t = static_cast<double>(n) * h;
    op.stages(detail::pack(forward, n), t, true, z, k);
    double forcing = 0.0;
    for (int s = 0; s < 4; ++s) {
      dz[s] = s == 0 ? du : Vector(du + offset[s] * dk[s - 1]);
      op.apply(dz[s], dk[s]);
      Vector src = Vector::Zero(op.size());
      op.add_kappa_derivative(dkappa, z[s], src);
      forcing = std::max(forcing, src.cwiseAbs().maxCoeff());
      dk[s] += src;
    }
    for (int s = 0; s < 4; ++s)
      du += h * detail::kRkWeights[s] * dk[s];
    monitor.inject(h * forcing);
    monitor.check(du);
    detail::unpack(du, hist, n + 1);
  }
  return hist;
}

/// Discrete adjoint (reverse-mode RK4) sweep driven by velocity drivers
/// (nodes x levels): the adjoint of the map from c to sum_n drivers_n . v_n.
inline AdjointSolution solve_adjoint(const WaveConfig& cfg, const Vector& c, const StateHistory& forward,
                                     const Matrix& drivers) {
  const detail::WaveOperator op(cfg, c);
  if (forward.steps() != cfg.steps)
    throw PreconditionViolation("adjoint solve needs the matching forward history");
  require_dim("adjoint drivers rows", op.nodes(), drivers.rows());
  require_dim("adjoint drivers cols", cfg.steps + 1, drivers.cols());
  const double h = op.dt();
  AdjointSolution out{detail::make_history(op.nodes(), op.elements(), cfg.steps, h), Vector()};
  detail::GrowthMonitor monitor("solve_adjoint");
  Vector gk = Vector::Zero(op.elements());
  Vector lam = Vector::Zero(op.size());
  lam.head(op.nodes()) = drivers.col(cfg.steps);
  monitor.inject(drivers.col(cfg.steps).cwiseAbs().maxCoeff());
  detail::unpack(lam, out.adjoint, cfg.steps);
  std::array<Vector, 4> z, k;
  std::array<Vector, 4> zbar;
  for (Index n = cfg.steps - 1; n >= 0; --n) {
    const double t = static_cast<double>(n) * h;
    op.stages(detail::pack(forward, n), t, true, z, k);
    Vector kbar;
    Vector next = lam;
    // k4, k3, k2, k1 in reverse; z_s = u + offset_s k_{s-1}.
    const std::array<double, 4> offset{0.0, 0.5 * h, 0.5 * h, h};
    for (int s = 3; s >= 0; --s) {
      kbar = h * detail::kRkWeights[s] * lam;
      if (s < 3)
        kbar += offset[s + 1] * zbar[s + 1];
      op.apply_transpose(kbar, zbar[s]);
      op.add_kappa_gradient(kbar, z[s], gk);
      next += zbar[s];
    }
    next.head(op.nodes()) += drivers.col(n);
    monitor.inject(drivers.col(n).cwiseAbs().maxCoeff());
    monitor.check(next);
    lam = std::move(next);
    detail::unpack(lam, out.adjoint, n);
  }
  out.c_gradient = op.c_gradient_from_kappa(gk);
  return out;
}

/// Incremental adjoint under the Gauss-Newton reduction: the adjoint sweep
/// driven by B^T Gamma_noise^{-1} B v_tilde (no second-order terms).
inline AdjointSolution solve_incremental_adjoint(const WaveConfig& cfg, const Vector& c, const StateHistory& forward,
                                                 const StateHistory& incremental, const ObservationOperator& obs,
                                                 const GaussianNoise& noise) {
  const Vector dy = noise.apply_inverse(obs.apply(incremental.v));
  return solve_adjoint(cfg, c, forward, obs.apply_transpose(dy, incremental.v.rows(), incremental.v.cols()));
}

/// Discrete energy 1/2 sum rho m_i v_i^2 + 1/2 sum h_k kappa_k e_k^2 at level n.
inline double wave_energy(const WaveConfig& cfg, const Vector& c, const StateHistory& hist, Index n) {
  const detail::WaveOperator op(cfg, c);
  return op.energy(detail::pack(hist, n));
}

/// f(c) = B v(c) for the 1D acoustic model; the parameter is the nodal wavespeed.
class WaveModel final : public ForwardModel {
public:
  WaveModel(WaveConfig cfg, const ObservationSetup& setup)
      : cfg_(std::make_shared<const WaveConfig>(std::move(cfg))),
        obs_(std::make_shared<const ObservationOperator>(setup, cfg_->mesh, cfg_->dt(), cfg_->steps)) {
    if (cfg_->mesh.dim() != 1)
      throw ConfigError("mesh.dim", "wave model requires a 1D mesh");
    if (cfg_->steps < 1 || !(cfg_->final_time > 0.0))
      throw ConfigError("wave", "final_time and steps must be positive");
  }

  const WaveConfig& config() const noexcept { return *cfg_; }
  const ObservationOperator& observation() const noexcept { return *obs_; }
  GaussianNoise noise() const { return {obs_->setup().noise_sigma}; }

  Index parameter_dim() const override { return cfg_->mesh.num_nodes(); }
  Index observation_dim() const override { return obs_->q(); }

  Vector observe(const Vector& c) const override { return obs_->apply(solve_forward(*cfg_, c).v); }

  Matrix traces(const Vector& c) const { return obs_->traces(solve_forward(*cfg_, c).v); }

  LinearizationPtr linearize(const Vector& c) const override {
    auto fwd = std::make_shared<const StateHistory>(solve_forward(*cfg_, c));
    Vector y = obs_->apply(fwd->v);
    return std::make_shared<const Lin>(cfg_, obs_, c, std::move(fwd), std::move(y));
  }

private:
  class Lin final : public Linearization {
  public:
    Lin(std::shared_ptr<const WaveConfig> cfg, std::shared_ptr<const ObservationOperator> obs, Vector c,
        std::shared_ptr<const StateHistory> fwd, Vector y)
        : cfg_(std::move(cfg)), obs_(std::move(obs)), c_(std::move(c)), fwd_(std::move(fwd)), y_(std::move(y)) {}

    const Vector& point() const override { return c_; }
    const Vector& observed() const override { return y_; }
    const StateHistory& forward() const { return *fwd_; }

    Vector apply_jacobian(const Vector& dc) const override {
      return obs_->apply(solve_incremental_forward(*cfg_, c_, *fwd_, dc).v);
    }

    Vector apply_jacobian_transpose(const Vector& dy) const override {
      const Matrix drivers = obs_->apply_transpose(dy, fwd_->v.rows(), fwd_->v.cols());
      return solve_adjoint(*cfg_, c_, *fwd_, drivers).c_gradient;
    }

  private:
    std::shared_ptr<const WaveConfig> cfg_;
    std::shared_ptr<const ObservationOperator> obs_;
    Vector c_;
    std::shared_ptr<const StateHistory> fwd_;
    Vector y_;
  };

  std::shared_ptr<const WaveConfig> cfg_;
  std::shared_ptr<const ObservationOperator> obs_;
};

} // namespace linbayes
