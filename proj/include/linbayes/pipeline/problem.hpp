#pragma once

#include "linbayes/forward_model.hpp"
#include "linbayes/linear_observations.hpp"
#include "linbayes/pipeline/config.hpp"
#include "linbayes/prior.hpp"
#include "linbayes/wave1d.hpp"

#include <memory>

namespace linbayes {

/// Everything a pipeline run needs, assembled from a config.
struct Problem {
  PipelineConfig config;
  std::shared_ptr<const PriorModel> prior;
  std::shared_ptr<const ForwardModel> model;
  /// Model used to synthesize data; a refined discretization for wave1d unless disabled.
  std::shared_ptr<const ForwardModel> truth_model;
  Vector truth;       ///< on the parameter mesh
  Vector truth_fine;  ///< on the truth model's mesh
  GaussianNoise noise;

  const Mesh& mesh() const { return prior->mesh(); }
  const WaveModel* wave() const { return dynamic_cast<const WaveModel*>(model.get()); }

  Vector synthesize() const { return synthesize_data(*truth_model, truth_fine, noise.sigma, config.seeds.data); }
};

namespace detail {

inline WaveConfig make_wave_config(const PipelineConfig& cfg, const MeshSpec& mesh_spec, Index steps) {
  const WaveSpec& w = *cfg.wave;
  WaveConfig wc;
  wc.mesh = mesh_spec.build();
  wc.rho = Vector::Constant(wc.mesh.num_nodes(), w.rho);
  wc.final_time = w.final_time;
  wc.steps = steps;
  wc.cfl = w.cfl;
  wc.source = w.source;
  return wc;
}

inline ObservationSetup make_observation_setup(const PipelineConfig& cfg) {
  ObservationSetup s;
  s.receivers = cfg.observation.receivers;
  s.sample_times = ObservationSetup::uniform_times(cfg.wave->final_time, cfg.observation.sample_count);
  s.fourier_modes = cfg.observation.fourier_modes;
  s.noise_sigma = cfg.observation.noise_sigma;
  return s;
}

} // namespace detail

inline Problem build_problem(const PipelineConfig& cfg) {
  Problem p;
  p.config = cfg;
  const Mesh mesh = cfg.mesh.build();
  const bool exact_sqrt = cfg.sampling.mass_sqrt == MassSqrt::exact;
  p.prior = std::make_shared<const PriorModel>(PriorModel::build(
      mesh, cfg.prior.alpha, cfg.prior.theta, Vector::Constant(mesh.num_nodes(), cfg.prior.mean), cfg.linear_solver,
      exact_sqrt));
  p.truth = cfg.truth.evaluate(mesh);
  p.noise = GaussianNoise{cfg.observation.noise_sigma};

  if (cfg.problem == ProblemKind::linear) {
    const LinearSpec& l = *cfg.linear;
    p.model = std::make_shared<const LinearMapModel>(
        make_kernel_average_map(mesh, p.prior->mspace(), l.points, l.kernel_width));
    p.truth_model = p.model;
    p.truth_fine = p.truth;
  } else {
    const WaveSpec& w = *cfg.wave;
    const ObservationSetup setup = detail::make_observation_setup(cfg);
    p.model = std::make_shared<const WaveModel>(detail::make_wave_config(cfg, cfg.mesh, w.steps), setup);
    if (w.truth_refinement == 1) {
      p.truth_model = p.model;
      p.truth_fine = p.truth;
    } else {
      const MeshSpec fine = cfg.mesh.refined(w.truth_refinement);
      p.truth_model = std::make_shared<const WaveModel>(
          detail::make_wave_config(cfg, fine, w.steps * w.truth_refinement), setup);
      p.truth_fine = cfg.truth.evaluate(fine.build());
    }
  }
  return p;
}

} // namespace linbayes
