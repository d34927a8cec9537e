#pragma once

#include "linbayes/io/checksum.hpp"
#include "linbayes/io/csv.hpp"
#include "linbayes/lowrank_posterior.hpp"
#include "linbayes/map_solver.hpp"
#include "linbayes/pipeline/config.hpp"
#include "linbayes/pipeline/problem.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace linbayes {

inline constexpr int kManifestSchemaVersion = 1;

enum class Stage { sample_prior, map, spectrum, variance, sample_posterior };

inline const char* stage_name(Stage s) {
  switch (s) {
  case Stage::sample_prior:
    return "sample-prior";
  case Stage::map:
    return "map";
  case Stage::spectrum:
    return "spectrum";
  case Stage::variance:
    return "variance";
  case Stage::sample_posterior:
    return "sample-posterior";
  }
  return "?";
}

inline std::optional<Stage> parse_stage(const std::string& name) {
  for (Stage s : {Stage::sample_prior, Stage::map, Stage::spectrum, Stage::variance, Stage::sample_posterior})
    if (name == stage_name(s))
      return s;
  return std::nullopt;
}

inline const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::sample_prior, Stage::map, Stage::spectrum, Stage::variance,
                                    Stage::sample_posterior};
  return s;
}

/// An upstream stage has not produced its artifacts (for this configuration).
class MissingStage : public Error {
public:
  MissingStage(std::string stage, const std::string& msg) : Error(msg), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int model = 3;
inline constexpr int io = 4;
inline constexpr int missing_stage = 5;
} // namespace exit_code

struct RunOptions {
  std::filesystem::path config_path;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed_data, seed_sample, seed_lanczos;
  std::vector<Stage> stages; ///< empty: every stage in order
  std::optional<Index> count; ///< sample count override for the sampling stages
  bool verbose = false;
  std::ostream* log = &std::cerr;
};

struct RunResult {
  int exit_code = exit_code::ok;
  std::string message;
  std::filesystem::path out_dir;
  Json manifest;
};

namespace detail {

/// Exclusive ownership of an output directory for the lifetime of a run.
class DirectoryLock {
public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".linbayes.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
  std::filesystem::path path_;
};

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i)
    a.push_back(v[i]);
  return a;
}

inline Vector json_vector(const Json& a, const std::string& what) {
  if (!a.is_array())
    throw IoError(what + ": expected an array");
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw IoError(what + ": expected numbers");
    v[static_cast<Index>(i)] = a[i].get<double>();
  }
  return v;
}

/// Independent, reproducible normal streams per purpose.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}

inline Vector standard_normal(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i)
    v[i] = normal(rng);
  return v;
}

class Pipeline {
public:
  Pipeline(PipelineConfig cfg, std::filesystem::path out, bool verbose, std::ostream* log)
      : cfg_(std::move(cfg)), out_(std::move(out)), verbose_(verbose), log_(log) {
    Json effective = cfg_.source;
    effective["seeds"] = Json{{"data", cfg_.seeds.data}, {"sample", cfg_.seeds.sample}, {"lanczos", cfg_.seeds.lanczos}};
    effective_config_ = effective;
    config_sha_ = io::sha256_hex(effective.dump());
  }

  void open_manifest(bool fresh) {
    const auto path = out_ / "manifest.json";
    if (!fresh && std::filesystem::exists(path)) {
      try {
        manifest_ = Json::parse(io::read_text(path));
      } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse " + path.string() + ": " + e.what());
      }
      if (!manifest_.is_object() || manifest_.value("schema_version", 0) != kManifestSchemaVersion)
        throw IoError(path.string() + ": unsupported manifest schema");
      manifest_.erase("failure");
    } else {
      manifest_ = Json::object();
      manifest_["schema_version"] = kManifestSchemaVersion;
      manifest_["tool"] = "linbayes";
      manifest_["stages"] = Json::object();
      manifest_["files"] = Json::object();
    }
    // A different configuration invalidates everything recorded so far.
    if (manifest_.value("config_sha256", std::string()) != config_sha_) {
      manifest_["stages"] = Json::object();
      manifest_["files"] = Json::object();
    }
    manifest_["config_sha256"] = config_sha_;
    manifest_["config"] = effective_config_;
  }

  void run(Stage s) {
    if (verbose_)
      *log_ << "[" << stage_name(s) << "] start\n";
    current_ = s;
    const auto t0 = std::chrono::steady_clock::now();
    Json entry;
    switch (s) {
    case Stage::sample_prior:
      entry = sample_prior_stage();
      break;
    case Stage::map:
      entry = map_stage();
      break;
    case Stage::spectrum:
      entry = spectrum_stage();
      break;
    case Stage::variance:
      entry = variance_stage();
      break;
    case Stage::sample_posterior:
      entry = sample_posterior_stage();
      break;
    }
    entry["status"] = "ok";
    entry["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest_["stages"][stage_name(s)] = entry;
    write_manifest();
    if (verbose_)
      *log_ << "[" << stage_name(s) << "] done\n";
  }

  void record_failure(const std::string& kind, const std::string& message, int code) {
    if (manifest_.is_null())
      return;
    manifest_["failure"] = Json{{"stage", current_ ? stage_name(*current_) : "setup"},
                                {"kind", kind},
                                {"message", message},
                                {"exit_code", code}};
    try {
      write_manifest();
    } catch (const std::exception&) {
    }
  }

  const Json& manifest() const { return manifest_; }
  void set_count(std::optional<Index> c) { count_ = c; }

private:
  const Problem& problem() {
    if (!problem_)
      problem_ = build_problem(cfg_);
    return *problem_;
  }

  void emit(const std::string& name, const std::string& text) {
    io::write_text(out_ / name, text);
    manifest_["files"][name] = Json{{"stage", stage_name(*current_)},
                                    {"bytes", text.size()},
                                    {"sha256", io::sha256_hex(text)}};
  }

  void forget_files(Stage s) {
    Json& files = manifest_["files"];
    std::vector<std::string> drop;
    for (auto it = files.begin(); it != files.end(); ++it)
      if (it.value().value("stage", std::string()) == stage_name(s))
        drop.push_back(it.key());
    for (const auto& k : drop)
      files.erase(k);
    // stages downstream of a rerun are stale
    auto& stages = manifest_["stages"];
    auto invalidate = [&](Stage d) {
      stages.erase(stage_name(d));
      std::vector<std::string> stale;
      for (auto it = files.begin(); it != files.end(); ++it)
        if (it.value().value("stage", std::string()) == stage_name(d))
          stale.push_back(it.key());
      for (const auto& k : stale)
        files.erase(k);
    };
    if (s == Stage::map) {
      invalidate(Stage::spectrum);
      invalidate(Stage::variance);
      invalidate(Stage::sample_posterior);
    } else if (s == Stage::spectrum) {
      invalidate(Stage::variance);
      invalidate(Stage::sample_posterior);
    }
  }

  void require_stage(Stage upstream) const {
    const Json& stages = manifest_["stages"];
    const char* name = stage_name(upstream);
    if (!stages.contains(name) || stages[name].value("status", std::string()) != "ok")
      throw MissingStage(name, std::string("stage '") + stage_name(*current_) + "' requires the '" + name +
                                   "' stage to have run for this configuration in " + out_.string());
  }

  void write_manifest() const { io::write_text(out_ / "manifest.json", manifest_.dump(2) + "\n"); }

  Json sample_prior_stage() {
    forget_files(Stage::sample_prior);
    const Problem& p = problem();
    const Index count = count_.value_or(cfg_.sampling.prior_count);
    auto rng = stream(cfg_.seeds.sample, 1);
    for (Index k = 0; k < count; ++k) {
      const Vector s = sample_prior(*p.prior, standard_normal(rng, p.prior->n()), cfg_.sampling.mass_sqrt);
      emit("prior_sample_" + std::to_string(k) + ".csv", io::field_csv(p.mesh(), s));
    }
    return Json{{"count", count}, {"seed", cfg_.seeds.sample}};
  }

  Json map_stage() {
    forget_files(Stage::map);
    const Problem& p = problem();
    emit("truth.csv", io::field_csv(p.mesh(), p.truth));
    const Vector y = p.synthesize();
    io::CsvWriter data({"index", "value"});
    for (Index i = 0; i < y.size(); ++i)
      data.row({static_cast<double>(i), y[i]});
    emit("data.csv", data.text());

    std::ostringstream history;
    std::ostream* tee = &history;
    const MapResult r = find_map(*p.prior, *p.model, y, p.noise, p.prior->mean(), cfg_.solver, tee);
    if (verbose_)
      *log_ << history.str();
    emit("map_history.tsv", "iteration\tobjective\tgradnorm\tcg_iters\tstep_length\n" + history.str());
    emit("map.csv", io::field_csv(p.mesh(), r.m_map));

    if (const WaveModel* wave = p.wave()) {
      const auto& setup = wave->observation().setup();
      auto seismograms = [&](const Matrix& traces) {
        io::CsvWriter w({"time", "receiver_id", "value"});
        for (Index rcv = 0; rcv < traces.rows(); ++rcv)
          for (Index j = 0; j < traces.cols(); ++j)
            w.row({setup.sample_times[static_cast<std::size_t>(j)], static_cast<double>(rcv), traces(rcv, j)});
        return w.text();
      };
      emit("seismograms_map.csv", seismograms(wave->traces(r.m_map)));
      if (!setup.fourier_modes) {
        const Index ns = static_cast<Index>(setup.sample_times.size());
        Matrix observed(static_cast<Index>(setup.receivers.size()), ns);
        for (Index rcv = 0; rcv < observed.rows(); ++rcv)
          observed.row(rcv) = y.segment(rcv * ns, ns).transpose();
        emit("seismograms_observed.csv", seismograms(observed));
      }
    }

    const double reduction =
        r.gradnorm_history.front() > 0.0 ? r.gradnorm_history.back() / r.gradnorm_history.front() : 0.0;
    Json entry;
    entry["converged"] = r.converged;
    entry["termination"] = r.termination;
    entry["newton_iters"] = r.newton_iters;
    entry["cg_iters_total"] = r.cg_iters_total;
    entry["map_gradnorm_reduction"] = reduction;
    entry["objective_history"] = r.objective_history;
    entry["gradnorm_history"] = r.gradnorm_history;
    entry["cg_iters"] = r.cg_iters;
    entry["step_lengths"] = r.step_lengths;
    entry["data_seed"] = cfg_.seeds.data;
    if (!r.converged)
      throw SolverFailure("MAP solver did not converge: " + r.termination, reduction, r.newton_iters);
    return entry;
  }

  Vector read_field(const std::string& name) {
    const Problem& p = problem();
    const io::Table t = io::read_csv(out_ / name);
    const Vector v = t.column_values("value");
    if (v.size() != p.prior->n())
      throw IoError(name + ": node count does not match the configured mesh");
    return v;
  }

  Json spectrum_stage() {
    require_stage(Stage::map);
    forget_files(Stage::spectrum);
    const Problem& p = problem();
    const Vector m_map = read_field("map.csv");
    LanczosOptions opts = cfg_.lowrank;
    opts.r_max = std::min(opts.r_max, p.prior->n());
    const EigenDecomposition eig = prior_preconditioned_eigs(*p.prior, p.model->linearize(m_map), p.noise, opts);

    io::CsvWriter spec({"index", "lambda"});
    Index ge1 = 0;
    for (Index i = 0; i < eig.rank(); ++i) {
      spec.row({static_cast<double>(i + 1), eig.lambdas[i]});
      ge1 += eig.lambdas[i] >= 1.0;
    }
    emit("spectrum.csv", spec.text());
    for (Index k = 0; k < std::min(eig.rank(), cfg_.output.eigenvector_count); ++k)
      emit("eigenvector_" + std::to_string(k + 1) + ".csv", io::field_csv(p.mesh(), eig.V.col(k)));

    Json lowrank;
    lowrank["schema_version"] = kManifestSchemaVersion;
    lowrank["n"] = p.prior->n();
    lowrank["m_map"] = vector_json(m_map);
    lowrank["lambdas"] = vector_json(eig.lambdas);
    lowrank["residual_norms"] = vector_json(eig.residual_norms);
    lowrank["discarded_ritz"] = vector_json(eig.discarded_ritz);
    lowrank["tail_exact"] = eig.tail_exact;
    lowrank["spectrum_truncated"] = eig.spectrum_truncated;
    lowrank["krylov_dim"] = eig.krylov_dim;
    lowrank["diagnostic"] = eig.diagnostic;
    Json cols = Json::array();
    for (Index k = 0; k < eig.rank(); ++k)
      cols.push_back(vector_json(eig.V.col(k)));
    lowrank["V"] = cols;
    emit("lowrank.json", lowrank.dump() + "\n");

    const TruncationBound bound = truncation_error_bound(eig);
    if (eig.spectrum_truncated && verbose_)
      *log_ << "[spectrum] warning: " << eig.diagnostic << "\n";
    Json entry;
    entry["rank"] = eig.rank();
    entry["count_ge_1"] = ge1;
    entry["lambdas"] = vector_json(eig.lambdas);
    entry["truncation_error"] = Json{{"value", bound.value}, {"estimate", bound.estimate}};
    entry["spectrum_truncated"] = eig.spectrum_truncated;
    entry["krylov_dim"] = eig.krylov_dim;
    entry["diagnostic"] = eig.diagnostic;
    entry["lanczos_seed"] = cfg_.seeds.lanczos;
    return entry;
  }

  LowRankPosterior load_lowrank() {
    require_stage(Stage::spectrum);
    const Problem& p = problem();
    Json j;
    try {
      j = Json::parse(io::read_text(out_ / "lowrank.json"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("cannot parse lowrank.json: ") + e.what());
    }
    if (!j.contains("V") || !j.contains("lambdas") || !j.contains("m_map"))
      throw IoError("lowrank.json: missing fields");
    EigenDecomposition eig;
    eig.lambdas = json_vector(j["lambdas"], "lowrank.json lambdas");
    eig.residual_norms = json_vector(j.value("residual_norms", Json::array()), "lowrank.json residual_norms");
    eig.discarded_ritz = json_vector(j.value("discarded_ritz", Json::array()), "lowrank.json discarded_ritz");
    eig.tail_exact = j.value("tail_exact", false);
    eig.V.resize(p.prior->n(), eig.lambdas.size());
    const Json& cols = j["V"];
    if (!cols.is_array() || static_cast<Index>(cols.size()) != eig.lambdas.size())
      throw IoError("lowrank.json: eigenvector count mismatch");
    for (Index k = 0; k < eig.lambdas.size(); ++k) {
      const Vector c = json_vector(cols[static_cast<std::size_t>(k)], "lowrank.json V");
      if (c.size() != p.prior->n())
        throw IoError("lowrank.json: eigenvector length does not match the configured mesh");
      eig.V.col(k) = c;
    }
    const Vector m_map = json_vector(j["m_map"], "lowrank.json m_map");
    if (m_map.size() != p.prior->n())
      throw IoError("lowrank.json: m_map length does not match the configured mesh");
    return LowRankPosterior(p.prior, m_map, std::move(eig));
  }

  Json variance_stage() {
    const LowRankPosterior lrp = load_lowrank();
    forget_files(Stage::variance);
    const Problem& p = problem();
    const Vector prior_var = prior_pointwise_variance(*p.prior);
    const PosteriorVariance post = posterior_pointwise_variance(lrp);
    emit("prior_variance.csv", io::field_csv(p.mesh(), prior_var));
    emit("posterior_variance.csv", io::field_csv(p.mesh(), post.values));
    if (post.clamped > 0 && verbose_)
      *log_ << "[variance] warning: " << post.clamped << " negative values clamped to 0\n";
    return Json{{"clamped", post.clamped},
                {"prior_variance_max", prior_var.maxCoeff()},
                {"posterior_variance_max", post.values.maxCoeff()}};
  }

  Json sample_posterior_stage() {
    const LowRankPosterior lrp = load_lowrank();
    forget_files(Stage::sample_posterior);
    const Problem& p = problem();
    const Index count = count_.value_or(cfg_.sampling.posterior_count);
    auto rng = stream(cfg_.seeds.sample, 2);
    const SamplingFactor l = build_sampling_factor(lrp, cfg_.sampling.mass_sqrt);
    for (Index k = 0; k < count; ++k) {
      const Vector s = lrp.m_map() + l.apply(standard_normal(rng, p.prior->n()));
      emit("posterior_sample_" + std::to_string(k) + ".csv", io::field_csv(p.mesh(), s));
    }
    return Json{{"count", count}, {"seed", cfg_.seeds.sample}};
  }

  PipelineConfig cfg_;
  std::filesystem::path out_;
  bool verbose_;
  std::ostream* log_;
  Json effective_config_;
  std::string config_sha_;
  Json manifest_;
  std::optional<Problem> problem_;
  std::optional<Stage> current_;
  std::optional<Index> count_;
};

} // namespace detail

/// Runs the requested stages. Never throws: failures map to exit codes
/// 2 (config), 3 (model/solver), 4 (IO), 5 (missing upstream stage).
inline RunResult run_pipeline(const RunOptions& opts) {
  RunResult result;
  std::optional<detail::Pipeline> pipeline;
  auto fail = [&](int code, const std::string& kind, const std::string& message) {
    result.exit_code = code;
    result.message = message;
    if (pipeline) {
      pipeline->record_failure(kind, message, code);
      result.manifest = pipeline->manifest();
    }
    return result;
  };
  try {
    PipelineConfig cfg = load_config(opts.config_path);
    if (opts.seed_data)
      cfg.seeds.data = *opts.seed_data;
    if (opts.seed_sample)
      cfg.seeds.sample = *opts.seed_sample;
    if (opts.seed_lanczos)
      cfg.seeds.lanczos = cfg.lowrank.seed = *opts.seed_lanczos;
    if (opts.count && *opts.count < 0)
      throw ConfigError("--count", "must be >= 0");
    result.out_dir = opts.out ? *opts.out : std::filesystem::path(cfg.output.directory);
    std::error_code ec;
    std::filesystem::create_directories(result.out_dir, ec);
    if (ec)
      throw IoError("cannot create output directory " + result.out_dir.string() + ": " + ec.message());
    detail::DirectoryLock lock(result.out_dir);
    const bool full = opts.stages.empty();
    pipeline.emplace(std::move(cfg), result.out_dir, opts.verbose, opts.log);
    pipeline->set_count(opts.count);
    pipeline->open_manifest(full);
    for (Stage s : full ? all_stages() : opts.stages)
      pipeline->run(s);
    result.manifest = pipeline->manifest();
    return result;
  } catch (const ConfigError& e) {
    return fail(exit_code::config, "config", e.what());
  } catch (const MissingStage& e) {
    return fail(exit_code::missing_stage, "missing-stage", e.what());
  } catch (const IoError& e) {
    return fail(exit_code::io, "io", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(exit_code::io, "io", e.what());
  } catch (const Error& e) {
    return fail(exit_code::model, "model", e.what());
  } catch (const std::exception& e) {
    return fail(exit_code::model, "internal", e.what());
  }
}

} // namespace linbayes
