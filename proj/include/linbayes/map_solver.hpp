#pragma once

#include "linbayes/forward_model.hpp"
#include "linbayes/prior.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace linbayes {

struct MapSolverConfig {
  double grad_tol_rel = 1e-6;
  int max_newton_iters = 50;
  int max_cg_iters = 200;
  /// CG tolerance min(forcing_max, (||g_k|| / ||g_0||)^forcing_exponent).
  double forcing_exponent = 0.5;
  double forcing_max = 0.5;
  double armijo_c1 = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 30;

  void validate() const {
    if (!(grad_tol_rel > 0.0) || max_newton_iters < 0 || max_cg_iters < 1 || !(forcing_exponent > 0.0) ||
        !(forcing_max > 0.0) || !(armijo_c1 > 0.0 && armijo_c1 < 1.0) || !(backtrack_factor > 0.0 && backtrack_factor < 1.0) ||
        max_backtracks < 1)
      throw ConfigError("solver", "invalid MAP solver configuration");
  }
};

struct MapResult {
  Vector m_map;
  bool converged = false;
  int newton_iters = 0;
  int cg_iters_total = 0;
  std::vector<double> objective_history;
  std::vector<double> gradnorm_history; ///< M-norms
  std::vector<int> cg_iters;
  std::vector<double> step_lengths;
  std::vector<double> descent_slopes; ///< (g, p)_M per Newton direction
  std::string termination;
};

/// Negative log posterior 1/2 ||f(m) - y||^2_{Gamma_noise^{-1}} + 1/2 ||A (m - m0)||^2_M.
inline double objective(const PriorModel& prior, const ForwardModel& model, const Vector& y_obs,
                        const GaussianNoise& noise, const Vector& m) {
  const Vector r = model.observe(m) - y_obs;
  return noise.misfit(r) - log_prior_density_unnormalized(prior, m);
}

/// M-Riesz gradient: F* Gamma_noise^{-1} (f(m) - y) + Gamma_prior^{-1} (m - m0).
inline Vector gradient(const PriorModel& prior, const LinearizationPtr& lin, const Vector& y_obs,
                       const GaussianNoise& noise) {
  const Vector& m = detail::require_linearization(lin).point();
  return misfit_gradient(lin, y_obs, noise, prior.mspace()) + apply_gamma_prior_inv(prior, m - prior.mean());
}

inline Vector gradient(const PriorModel& prior, const ForwardModel& model, const Vector& y_obs,
                       const GaussianNoise& noise, const Vector& m) {
  return gradient(prior, model.linearize(m), y_obs, noise);
}

namespace detail {

struct CgOutcome {
  Vector step;
  int iterations = 0;
  bool negative_curvature = false;
};

/// Prior-preconditioned CG in the M inner product on
/// (H_misfit + Gamma_prior^{-1}) p = -g.
inline CgOutcome gauss_newton_cg(const PriorModel& prior, const LinearizationPtr& lin, const GaussianNoise& noise,
                                 const Vector& g, double rel_tol, int max_iters) {
  const MSpace& ms = prior.mspace();
  auto hess = [&](const Vector& d) {
    return Vector(misfit_gn_hessian_action(lin, d, noise, ms) + apply_gamma_prior_inv(prior, d));
  };
  CgOutcome out;
  out.step = Vector::Zero(g.size());
  Vector r = -g;
  Vector z = apply_gamma_prior(prior, r);
  Vector d = z;
  double rz = ms.inner(r, z);
  const double r0 = ms.norm(r);
  for (int it = 0; it < max_iters; ++it) {
    const Vector hd = hess(d);
    const double curvature = ms.inner(d, hd);
    if (curvature <= 1e-14 * ms.inner(d, d)) {
      out.negative_curvature = true;
      if (it == 0)
        out.step = z; // preconditioned steepest descent
      break;
    }
    const double a = rz / curvature;
    out.step += a * d;
    r -= a * hd;
    out.iterations = it + 1;
    if (ms.norm(r) <= rel_tol * r0)
      break;
    z = apply_gamma_prior(prior, r);
    const double rz_new = ms.inner(r, z);
    d = z + (rz_new / rz) * d;
    rz = rz_new;
  }
  return out;
}

inline void log_iteration(std::ostream* log, int iter, double obj, double gnorm, int cg, double step) {
  if (!log)
    return;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%d\t%.17g\n", iter, obj, gnorm, cg, step);
  *log << buf;
}

} // namespace detail

/// Inexact Gauss-Newton-CG with Armijo backtracking. Never throws on
/// line-search failure: returns converged = false with the best iterate.
/// Log lines are tab separated: iteration, objective, gradnorm, cg_iters, step_length.
inline MapResult find_map(const PriorModel& prior, const ForwardModel& model, const Vector& y_obs,
                          const GaussianNoise& noise, const Vector& m_init, const MapSolverConfig& cfg = {},
                          std::ostream* log = nullptr) {
  cfg.validate();
  require_dim("find_map m_init", prior.n(), m_init.size());
  require_dim("find_map y_obs", model.observation_dim(), y_obs.size());
  const MSpace& ms = prior.mspace();
  MapResult res;
  res.m_map = m_init;

  LinearizationPtr lin = model.linearize(res.m_map);
  auto objective_at = [&](const LinearizationPtr& l) {
    return noise.misfit(l->observed() - y_obs) - log_prior_density_unnormalized(prior, l->point());
  };
  double obj = objective_at(lin);
  Vector g = gradient(prior, lin, y_obs, noise);
  double gnorm = ms.norm(g);
  const double gnorm0 = gnorm;
  res.objective_history.push_back(obj);
  res.gradnorm_history.push_back(gnorm);
  detail::log_iteration(log, 0, obj, gnorm, 0, 0.0);

  for (int k = 0;; ++k) {
    if (gnorm == 0.0 || gnorm <= cfg.grad_tol_rel * gnorm0) {
      res.converged = true;
      res.termination = "gradient reduction reached";
      break;
    }
    if (k >= cfg.max_newton_iters) {
      res.termination = "maximum Newton iterations reached";
      break;
    }
    const double eta = std::min(cfg.forcing_max, std::pow(gnorm / gnorm0, cfg.forcing_exponent));
    const detail::CgOutcome cg = detail::gauss_newton_cg(prior, lin, noise, g, eta, cfg.max_cg_iters);
    res.cg_iters_total += cg.iterations;
    const double slope = ms.inner(g, cg.step);
    res.descent_slopes.push_back(slope);
    if (!(slope < 0.0)) {
      res.termination = "CG returned a non-descent direction";
      break;
    }

    double step = 1.0;
    bool accepted = false;
    LinearizationPtr trial_lin;
    double trial_obj = 0.0;
    for (int b = 0; b < cfg.max_backtracks; ++b) {
      const Vector trial = res.m_map + step * cg.step;
      try {
        trial_lin = model.linearize(trial);
        trial_obj = objective_at(trial_lin);
        if (std::isfinite(trial_obj) && trial_obj <= obj + cfg.armijo_c1 * step * slope && trial_obj < obj) {
          accepted = true;
          break;
        }
      } catch (const InvalidParameter&) {
      } catch (const ConfigError&) {
      } catch (const StabilityFailure&) {
      }
      step *= cfg.backtrack_factor;
    }
    if (!accepted) {
      res.termination = "line search failed";
      break;
    }
    lin = trial_lin;
    res.m_map = lin->point();
    obj = trial_obj;
    g = gradient(prior, lin, y_obs, noise);
    gnorm = ms.norm(g);
    ++res.newton_iters;
    res.objective_history.push_back(obj);
    res.gradnorm_history.push_back(gnorm);
    res.cg_iters.push_back(cg.iterations);
    res.step_lengths.push_back(step);
    detail::log_iteration(log, res.newton_iters, obj, gnorm, cg.iterations, step);
  }
  return res;
}

} // namespace linbayes
