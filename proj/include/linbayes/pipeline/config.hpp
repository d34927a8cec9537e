#pragma once

#include "linbayes/lanczos.hpp"
#include "linbayes/map_solver.hpp"
#include "linbayes/mesh.hpp"
#include "linbayes/mspace.hpp"
#include "linbayes/theta.hpp"
#include "linbayes/wave1d.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace linbayes {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;

struct MeshSpec {
  int dim = 1;
  std::array<Index, 2> elements{1, 1};
  Point lower{0.0, 0.0};
  Point upper{1.0, 1.0};

  Mesh build() const { return build_mesh(dim, elements, Box{lower, upper}); }
  MeshSpec refined(Index factor) const {
    MeshSpec r = *this;
    r.elements = {elements[0] * factor, dim == 2 ? elements[1] * factor : elements[1]};
    return r;
  }
};

struct Bump {
  Point center{0.0, 0.0};
  double width = 0.1;
  double amplitude = 0.0;
};

/// background + sum of Gaussian bumps, evaluated at nodes.
struct FieldSpec {
  double background = 0.0;
  std::vector<Bump> bumps;

  double at(const Point& x, int dim) const {
    double v = background;
    for (const Bump& b : bumps) {
      double r2 = 0.0;
      for (int a = 0; a < dim; ++a)
        r2 += std::pow(x[static_cast<std::size_t>(a)] - b.center[static_cast<std::size_t>(a)], 2);
      v += b.amplitude * std::exp(-r2 / (b.width * b.width));
    }
    return v;
  }
  Vector evaluate(const Mesh& mesh) const {
    Vector out(mesh.num_nodes());
    for (Index i = 0; i < mesh.num_nodes(); ++i)
      out[i] = at(mesh.node(i), mesh.dim());
    return out;
  }
};

struct PriorSpec {
  double alpha = 1.5e-2;
  ThetaSpec theta = IsotropicTheta{1.0};
  double mean = 0.0;
};

struct LinearSpec {
  std::vector<Point> points;
  double kernel_width = 0.1;
};

struct WaveSpec {
  double final_time = 0.8;
  Index steps = 400;
  double cfl = 0.5;
  double rho = 1.0;
  PointSource source;
  /// Truth data generated on a mesh and time grid refined by this factor (1 = off).
  Index truth_refinement = 2;
};

struct ObservationSpec {
  std::vector<double> receivers;
  Index sample_count = 0;
  std::optional<Index> fourier_modes;
  double noise_sigma = 0.002;
};

struct SamplingSpec {
  Index prior_count = 4;
  Index posterior_count = 4;
  MassSqrt mass_sqrt = MassSqrt::lumped;
};

struct Seeds {
  std::uint64_t data = 0;
  std::uint64_t sample = 0;
  std::uint64_t lanczos = 0;
};

struct OutputSpec {
  std::string directory = "linbayes_out";
  Index eigenvector_count = 4;
};

enum class ProblemKind { linear, wave1d };

struct PipelineConfig {
  ProblemKind problem = ProblemKind::linear;
  MeshSpec mesh;
  PriorSpec prior;
  FieldSpec truth;
  std::optional<LinearSpec> linear;
  std::optional<WaveSpec> wave;
  ObservationSpec observation;
  MapSolverConfig solver;
  SolverOptions linear_solver;
  LanczosOptions lowrank;
  SamplingSpec sampling;
  Seeds seeds;
  OutputSpec output;
  Json source; ///< the parsed document, echoed into the manifest
};

namespace detail {

/// Reads one JSON object, remembering consumed keys so leftovers can be rejected.
class ObjectReader {
public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object())
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key))
      throw ConfigError(child(key), "missing required field");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_number())
      throw ConfigError(child(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  Index integer(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_number_integer())
      throw ConfigError(child(key), "expected an integer");
    return v.get<Index>();
  }
  Index integer(const std::string& key, Index fallback) { return has(key) ? integer(key) : fallback; }

  std::uint64_t seed(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_number_unsigned())
      throw ConfigError(child(key), "expected a nonnegative integer seed");
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_string())
      throw ConfigError(child(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_array())
      throw ConfigError(child(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ConfigError(child(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(child(it.key()), "unknown field");
  }

private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok)
    throw ConfigError(path, msg);
}

inline Point read_point(const std::vector<double>& v, int dim, const std::string& path) {
  require(static_cast<int>(v.size()) == dim, path, "expected " + std::to_string(dim) + " coordinates");
  return Point{v[0], dim == 2 ? v[1] : 0.0};
}

inline MeshSpec parse_mesh(const Json& j) {
  ObjectReader r(j, "mesh");
  MeshSpec m;
  m.dim = static_cast<int>(r.integer("dim"));
  require(m.dim == 1 || m.dim == 2, "mesh.dim", "must be 1 or 2");
  const Json& el = r.at("elements");
  if (el.is_number_integer()) {
    m.elements = {el.get<Index>(), 1};
    require(m.dim == 1, "mesh.elements", "a scalar element count needs dim = 1");
  } else {
    require(el.is_array() && static_cast<int>(el.size()) == m.dim, "mesh.elements",
            "expected one integer count per dimension");
    for (int a = 0; a < m.dim; ++a) {
      require(el[static_cast<std::size_t>(a)].is_number_integer(), "mesh.elements", "counts must be integers");
      m.elements[static_cast<std::size_t>(a)] = el[static_cast<std::size_t>(a)].get<Index>();
    }
  }
  for (int a = 0; a < m.dim; ++a)
    require(m.elements[static_cast<std::size_t>(a)] >= 1, "mesh.elements", "counts must be >= 1");
  m.lower = read_point(r.numbers("lower"), m.dim, "mesh.lower");
  m.upper = read_point(r.numbers("upper"), m.dim, "mesh.upper");
  for (int a = 0; a < m.dim; ++a)
    require(m.upper[static_cast<std::size_t>(a)] > m.lower[static_cast<std::size_t>(a)], "mesh.upper",
            "must exceed mesh.lower in every coordinate");
  r.finish();
  return m;
}

inline PriorSpec parse_prior(const Json& j) {
  ObjectReader r(j, "prior");
  PriorSpec p;
  p.alpha = r.number("alpha");
  require(p.alpha > 0.0, "prior.alpha", "must be positive");
  p.mean = r.number("mean", 0.0);
  ObjectReader t(r.at("theta"), "prior.theta");
  const std::string kind = t.string("kind");
  const double beta = t.number("beta");
  require(beta > 0.0, "prior.theta.beta", "must be positive");
  if (kind == "isotropic") {
    p.theta = IsotropicTheta{beta};
  } else if (kind == "radial_anisotropic") {
    const double theta = t.number("theta");
    const double radius = t.number("radius");
    require(theta > 0.0 && theta <= 1.0, "prior.theta.theta", "must lie in (0, 1]");
    require(radius > 0.0, "prior.theta.radius", "must be positive");
    p.theta = RadialAnisotropicTheta{beta, theta, radius};
  } else {
    throw ConfigError("prior.theta.kind", "expected \"isotropic\" or \"radial_anisotropic\"");
  }
  t.finish();
  r.finish();
  return p;
}

inline FieldSpec parse_field(const Json& j, int dim, const std::string& path) {
  ObjectReader r(j, path);
  FieldSpec f;
  f.background = r.number("background", 0.0);
  if (r.has("bumps")) {
    const Json& arr = r.at("bumps");
    require(arr.is_array(), path + ".bumps", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string bp = path + ".bumps[" + std::to_string(i) + "]";
      ObjectReader b(arr[i], bp);
      Bump bump;
      bump.center = read_point(b.numbers("center"), dim, bp + ".center");
      bump.width = b.number("width");
      require(bump.width > 0.0, bp + ".width", "must be positive");
      bump.amplitude = b.number("amplitude");
      b.finish();
      f.bumps.push_back(bump);
    }
  }
  r.finish();
  return f;
}

inline LinearSpec parse_linear(const Json& j, int dim) {
  ObjectReader r(j, "linear");
  LinearSpec l;
  const Json& pts = r.at("points");
  require(pts.is_array() && !pts.empty(), "linear.points", "expected a nonempty array of points");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::string pp = "linear.points[" + std::to_string(i) + "]";
    require(pts[i].is_array(), pp, "expected a coordinate array");
    std::vector<double> c;
    for (const auto& x : pts[i]) {
      require(x.is_number(), pp, "coordinates must be numbers");
      c.push_back(x.get<double>());
    }
    l.points.push_back(read_point(c, dim, pp));
  }
  l.kernel_width = r.number("kernel_width");
  require(l.kernel_width > 0.0, "linear.kernel_width", "must be positive");
  r.finish();
  return l;
}

inline WaveSpec parse_wave(const Json& j) {
  ObjectReader r(j, "wave");
  WaveSpec w;
  w.final_time = r.number("final_time");
  require(w.final_time > 0.0, "wave.final_time", "must be positive");
  w.steps = r.integer("steps");
  require(w.steps >= 1, "wave.steps", "must be >= 1");
  w.cfl = r.number("cfl", w.cfl);
  require(w.cfl > 0.0 && w.cfl <= 0.5, "wave.cfl", "must lie in (0, 0.5]");
  w.rho = r.number("rho", w.rho);
  require(w.rho > 0.0, "wave.rho", "must be positive");
  w.truth_refinement = r.integer("truth_refinement", w.truth_refinement);
  require(w.truth_refinement >= 1, "wave.truth_refinement", "must be >= 1 (1 disables refinement)");
  ObjectReader s(r.at("source"), "wave.source");
  w.source.location = s.number("location");
  w.source.width = s.number("width");
  require(w.source.width > 0.0, "wave.source.width", "must be positive");
  w.source.t_center = s.number("t_center");
  w.source.t_std = s.number("t_std");
  require(w.source.t_std > 0.0, "wave.source.t_std", "must be positive");
  w.source.amplitude = s.number("amplitude", 1.0);
  s.finish();
  r.finish();
  return w;
}

inline ObservationSpec parse_observation(const Json& j, ProblemKind kind) {
  ObjectReader r(j, "observation");
  ObservationSpec o;
  o.noise_sigma = r.number("noise_sigma");
  require(o.noise_sigma > 0.0, "observation.noise_sigma", "must be positive");
  if (kind == ProblemKind::wave1d) {
    o.receivers = r.numbers("receivers");
    require(!o.receivers.empty(), "observation.receivers", "at least one receiver is required");
    o.sample_count = r.integer("sample_count");
    require(o.sample_count >= 1, "observation.sample_count", "must be >= 1");
    if (r.has("fourier_modes") && !r.at("fourier_modes").is_null()) {
      o.fourier_modes = r.integer("fourier_modes");
      require(*o.fourier_modes >= 1 && 2 * *o.fourier_modes - 1 <= o.sample_count, "observation.fourier_modes",
              "need 1 <= modes and 2*modes-1 <= sample_count");
    }
  }
  r.finish();
  return o;
}

inline void parse_solver(const Json& j, PipelineConfig& cfg) {
  ObjectReader r(j, "solver");
  MapSolverConfig& s = cfg.solver;
  s.grad_tol_rel = r.number("grad_tol_rel", s.grad_tol_rel);
  s.max_newton_iters = static_cast<int>(r.integer("max_newton_iters", s.max_newton_iters));
  s.max_cg_iters = static_cast<int>(r.integer("max_cg_iters", s.max_cg_iters));
  s.forcing_exponent = r.number("forcing_exponent", s.forcing_exponent);
  s.forcing_max = r.number("forcing_max", s.forcing_max);
  s.armijo_c1 = r.number("armijo_c1", s.armijo_c1);
  s.backtrack_factor = r.number("backtrack_factor", s.backtrack_factor);
  s.max_backtracks = static_cast<int>(r.integer("max_backtracks", s.max_backtracks));
  const std::string ls = r.string("linear_solver", "pcg_jacobi");
  if (ls == "pcg_jacobi")
    cfg.linear_solver.kind = SolverKind::pcg_jacobi;
  else if (ls == "sparse_cholesky")
    cfg.linear_solver.kind = SolverKind::sparse_cholesky;
  else
    throw ConfigError("solver.linear_solver", "expected \"pcg_jacobi\" or \"sparse_cholesky\"");
  cfg.linear_solver.rel_tol = r.number("linear_tol", cfg.linear_solver.rel_tol);
  require(cfg.linear_solver.rel_tol > 0.0, "solver.linear_tol", "must be positive");
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError&) {
    throw ConfigError("solver", "tolerances and counts must be positive, armijo_c1 and backtrack_factor in (0, 1)");
  }
}

inline LanczosOptions parse_lowrank(const Json& j) {
  ObjectReader r(j, "lowrank");
  LanczosOptions o;
  o.r_max = r.integer("r_max", o.r_max);
  require(o.r_max >= 0, "lowrank.r_max", "must be >= 0");
  o.eig_tol = r.number("eig_tol", o.eig_tol);
  require(o.eig_tol > 0.0, "lowrank.eig_tol", "must be positive");
  o.trunc_threshold = r.number("trunc_threshold", o.trunc_threshold);
  require(o.trunc_threshold >= 0.0, "lowrank.trunc_threshold", "must be >= 0");
  o.max_iters = r.integer("max_iters", o.max_iters);
  require(o.max_iters >= 0, "lowrank.max_iters", "must be >= 0");
  o.crossing_patience = static_cast<int>(r.integer("crossing_patience", o.crossing_patience));
  require(o.crossing_patience >= 0, "lowrank.crossing_patience", "must be >= 0");
  r.finish();
  return o;
}

inline SamplingSpec parse_sampling(const Json& j) {
  ObjectReader r(j, "sampling");
  SamplingSpec s;
  s.prior_count = r.integer("prior_count", s.prior_count);
  require(s.prior_count >= 0, "sampling.prior_count", "must be >= 0");
  s.posterior_count = r.integer("posterior_count", s.posterior_count);
  require(s.posterior_count >= 0, "sampling.posterior_count", "must be >= 0");
  const std::string mode = r.string("mass_sqrt", "lumped");
  if (mode == "lumped")
    s.mass_sqrt = MassSqrt::lumped;
  else if (mode == "exact")
    s.mass_sqrt = MassSqrt::exact;
  else
    throw ConfigError("sampling.mass_sqrt", "expected \"lumped\" or \"exact\"");
  r.finish();
  return s;
}

} // namespace detail

/// Parses and validates a schema-version-1 config. Unknown keys are rejected.
inline PipelineConfig parse_config(const Json& j) {
  detail::ObjectReader r(j, "");
  const Json& ver = r.at("schema_version");
  detail::require(ver.is_number_integer() && ver.get<int>() == kConfigSchemaVersion, "schema_version",
                  "unsupported schema version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  PipelineConfig cfg;
  const std::string problem = r.string("problem");
  if (problem == "linear")
    cfg.problem = ProblemKind::linear;
  else if (problem == "wave1d")
    cfg.problem = ProblemKind::wave1d;
  else
    throw ConfigError("problem", "expected \"linear\" or \"wave1d\"");

  cfg.mesh = detail::parse_mesh(r.at("mesh"));
  cfg.prior = detail::parse_prior(r.at("prior"));
  cfg.truth = detail::parse_field(r.at("truth"), cfg.mesh.dim, "truth");
  if (cfg.problem == ProblemKind::linear) {
    cfg.linear = detail::parse_linear(r.at("linear"), cfg.mesh.dim);
  } else {
    detail::require(cfg.mesh.dim == 1, "mesh.dim", "the wave1d problem needs a 1D mesh");
    cfg.wave = detail::parse_wave(r.at("wave"));
  }
  cfg.observation = detail::parse_observation(r.at("observation"), cfg.problem);
  if (cfg.wave)
    detail::require(cfg.observation.sample_count <= cfg.wave->steps && cfg.wave->steps % cfg.observation.sample_count == 0,
                    "observation.sample_count", "must divide wave.steps");
  if (r.has("solver"))
    detail::parse_solver(r.at("solver"), cfg);
  if (r.has("lowrank"))
    cfg.lowrank = detail::parse_lowrank(r.at("lowrank"));
  if (r.has("sampling"))
    cfg.sampling = detail::parse_sampling(r.at("sampling"));

  detail::ObjectReader s(r.at("seeds"), "seeds");
  cfg.seeds.data = s.seed("data");
  cfg.seeds.sample = s.seed("sample");
  cfg.seeds.lanczos = s.seed("lanczos");
  s.finish();
  cfg.lowrank.seed = cfg.seeds.lanczos;

  if (r.has("output")) {
    detail::ObjectReader o(r.at("output"), "output");
    cfg.output.directory = o.string("directory", cfg.output.directory);
    cfg.output.eigenvector_count = o.integer("eigenvector_count", cfg.output.eigenvector_count);
    detail::require(cfg.output.eigenvector_count >= 0, "output.eigenvector_count", "must be >= 0");
    o.finish();
  }
  r.finish();
  cfg.source = j;
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("<file>", "cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

} // namespace linbayes
