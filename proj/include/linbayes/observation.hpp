#pragma once

#include "linbayes/mesh.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

namespace linbayes {

/// Receivers, sampling and noise level of a time-domain experiment.
struct ObservationSetup {
  std::vector<double> receivers;    ///< receiver positions in the 1D domain
  std::vector<double> sample_times; ///< increasing, in (0, T], on the time-step grid
  std::optional<Index> fourier_modes;
  double noise_sigma = 0.002;

  Index per_receiver() const {
    return fourier_modes ? 2 * *fourier_modes - 1 : static_cast<Index>(sample_times.size());
  }
  Index q() const { return static_cast<Index>(receivers.size()) * per_receiver(); }

  /// n uniformly spaced samples ending at T.
  static std::vector<double> uniform_times(double final_time, Index count) {
    std::vector<double> t;
    for (Index j = 1; j <= count; ++j)
      t.push_back(final_time * static_cast<double>(j) / static_cast<double>(count));
    return t;
  }
};

/// Linear observation map B from a velocity history (nodes x time levels) to R^q:
/// receiver interpolation, time sampling, then an optional truncated real DFT.
/// Observation vector is receiver-major.
class ObservationOperator {
public:
  ObservationOperator() = default;

  ObservationOperator(const ObservationSetup& setup, const Mesh& mesh, double dt, Index steps)
      : setup_(setup) {
    if (setup.receivers.empty())
      throw ConfigError("observation.receivers", "at least one receiver is required");
    if (setup.sample_times.empty())
      throw ConfigError("observation.sample_times", "at least one sample time is required");
    if (!(setup.noise_sigma > 0.0))
      throw ConfigError("observation.noise_sigma", "must be positive");
    for (double r : setup.receivers)
      receivers_.push_back(mesh.evaluate_basis({r, 0.0}));
    double prev = 0.0;
    for (double t : setup.sample_times) {
      if (!(t > prev))
        throw ConfigError("observation.sample_times", "must be increasing and positive");
      prev = t;
      const double k = std::round(t / dt);
      if (std::abs(k * dt - t) > 1e-6 * dt || k < 1 || k > static_cast<double>(steps))
        throw ConfigError("observation.sample_times", "sample time not on the time-step grid in (0, T]");
      steps_.push_back(static_cast<Index>(k));
    }
    const Index ns = static_cast<Index>(steps_.size());
    if (setup.fourier_modes) {
      const Index modes = *setup.fourier_modes;
      if (modes < 1 || 2 * modes - 1 > ns)
        throw ConfigError("observation.fourier_modes", "need 1 <= modes and 2*modes-1 <= sample count");
      const double spacing = setup.sample_times.back() / static_cast<double>(ns);
      for (std::size_t j = 1; j < setup.sample_times.size(); ++j)
        if (std::abs(setup.sample_times[j] - setup.sample_times[j - 1] - spacing) > 1e-9 * spacing)
          throw ConfigError("observation.sample_times", "Fourier observables require uniform sampling");
      dft_ = Matrix::Zero(2 * modes - 1, ns);
      for (Index j = 0; j < ns; ++j) {
        dft_(0, j) = spacing;
        for (Index k = 1; k < modes; ++k) {
          const double arg = 2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(ns);
          dft_(2 * k - 1, j) = spacing * std::cos(arg);
          dft_(2 * k, j) = spacing * std::sin(arg);
        }
      }
    }
  }

  const ObservationSetup& setup() const noexcept { return setup_; }
  Index q() const { return setup_.q(); }
  Index receiver_count() const { return static_cast<Index>(receivers_.size()); }
  const std::vector<Index>& sample_steps() const noexcept { return steps_; }

  /// Raw receiver traces, receivers x samples.
  Matrix traces(const Matrix& v_history) const {
    Matrix out(receiver_count(), static_cast<Index>(steps_.size()));
    for (Index r = 0; r < receiver_count(); ++r)
      for (std::size_t j = 0; j < steps_.size(); ++j)
        out(r, static_cast<Index>(j)) = receivers_[static_cast<std::size_t>(r)].dot(v_history.col(steps_[j]));
    return out;
  }

  Vector apply(const Matrix& v_history) const {
    const Matrix tr = traces(v_history);
    const Index per = setup_.per_receiver();
    Vector y(q());
    for (Index r = 0; r < receiver_count(); ++r) {
      if (dft_.size() > 0)
        y.segment(r * per, per) = dft_ * tr.row(r).transpose();
      else
        y.segment(r * per, per) = tr.row(r).transpose();
    }
    return y;
  }

  /// B^T y as a velocity driver history (nodes x levels).
  Matrix apply_transpose(const Vector& y, Index nodes, Index levels) const {
    require_dim("ObservationOperator::apply_transpose", q(), y.size());
    Matrix drivers = Matrix::Zero(nodes, levels);
    const Index per = setup_.per_receiver();
    for (Index r = 0; r < receiver_count(); ++r) {
      Vector series = dft_.size() > 0 ? Vector(dft_.transpose() * y.segment(r * per, per))
                                      : Vector(y.segment(r * per, per));
      const BasisEval& phi = receivers_[static_cast<std::size_t>(r)];
      for (std::size_t j = 0; j < steps_.size(); ++j)
        for (int a = 0; a < phi.count; ++a)
          drivers(phi.nodes[a], steps_[j]) += phi.weights[a] * series[static_cast<Index>(j)];
    }
    return drivers;
  }

private:
  ObservationSetup setup_;
  std::vector<BasisEval> receivers_;
  std::vector<Index> steps_;
  Matrix dft_;
};

} // namespace linbayes
