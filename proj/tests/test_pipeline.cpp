#include "linbayes/pipeline/pipeline.hpp"
#include "support/dense_oracle.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace linbayes {
namespace {

namespace fs = std::filesystem;

std::string config_path(const char* name) { return std::string(LINBAYES_CONFIG_DIR) + "/" + name; }

Json config_json(const char* name) { return Json::parse(io::read_text(config_path(name))); }

class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("linbayes_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

private:
  fs::path path_;
};

fs::path write_config(const TempDir& dir, const Json& j, const std::string& name = "config.json") {
  const fs::path p = dir / name;
  io::write_text(p, j.dump(2));
  return p;
}

RunOptions options(const fs::path& config, const fs::path& out, std::vector<Stage> stages = {}) {
  RunOptions o;
  o.config_path = config;
  o.out = out;
  o.stages = std::move(stages);
  return o;
}

std::map<std::string, std::string> checksums(const Json& manifest) {
  std::map<std::string, std::string> out;
  for (auto it = manifest["files"].begin(); it != manifest["files"].end(); ++it)
    out[it.key()] = it.value()["sha256"].get<std::string>();
  return out;
}

// ---- primitives ----------------------------------------------------------

TEST(Checksum, KnownVectors) {
  EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Csv, DoublesRoundTripExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  io::CsvWriter w({"a", "b"});
  std::vector<double> values;
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng) * std::pow(10.0, i % 40 - 20), b = 1.0 / (i + 3);
    values.push_back(a);
    values.push_back(b);
    w.row({a, b});
  }
  const io::Table t = io::parse_csv(w.text());
  ASSERT_EQ(t.rows.size(), 200u);
  const Vector a = t.column_values("a"), b = t.column_values("b");
  for (int i = 0; i < 200; ++i) {
    EXPECT_EQ(a[i], values[2 * i]);
    EXPECT_EQ(b[i], values[2 * i + 1]);
  }
}

TEST(Csv, RecordsEndWithCrlfAndUseDotDecimal) {
  io::CsvWriter w({"x", "value"});
  w.row({0.5, -2.25});
  EXPECT_EQ(w.text(), "x,value\r\n0.5,-2.25\r\n");
}

TEST(Csv, MalformedInputIsIoError) {
  EXPECT_THROW(io::parse_csv("x,value\r\n1,abc\r\n"), IoError);
  EXPECT_THROW(io::parse_csv("x,value\r\n1\r\n"), IoError);
  EXPECT_THROW(io::parse_csv(""), IoError);
}

TEST(Csv, FieldFileCarriesCoordinates) {
  const Mesh mesh = build_mesh(2, {2, 2}, Box{});
  const io::Table t = io::parse_csv(io::field_csv(mesh, Vector::LinSpaced(9, 0.0, 8.0)));
  EXPECT_EQ(t.header, (std::vector<std::string>{"x", "y", "value"}));
  EXPECT_EQ(t.rows.size(), 9u);
}

// ---- configuration ------------------------------------------------------

TEST(Config, BundledConfigsParse) {
  EXPECT_EQ(load_config(config_path("linear_small.json")).problem, ProblemKind::linear);
  EXPECT_EQ(load_config(config_path("wave1d_small.json")).problem, ProblemKind::wave1d);
}

TEST(Config, UnknownKeyIsRejectedWithPath) {
  Json j = config_json("linear_small.json");
  j["prior"]["alpah"] = 1.0;
  try {
    parse_config(j);
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field_path(), "prior.alpah");
  }
  Json top = config_json("linear_small.json");
  top["extra"] = 1;
  EXPECT_THROW(parse_config(top), ConfigError);
}

TEST(Config, NegativeNoiseSigmaNamesTheField) {
  Json j = config_json("linear_small.json");
  j["observation"]["noise_sigma"] = -1.0;
  try {
    parse_config(j);
    FAIL() << "negative sigma accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field_path(), "observation.noise_sigma");
  }
}

TEST(Config, SchemaVersionIsChecked) {
  Json j = config_json("linear_small.json");
  j["schema_version"] = 2;
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Config, SeedsMustBeExplicit) {
  Json j = config_json("linear_small.json");
  j.erase("seeds");
  EXPECT_THROW(parse_config(j), ConfigError);
}

TEST(Config, MalformedJsonIsConfigError) {
  TempDir dir;
  io::write_text(dir / "bad.json", "{ \"schema_version\": 1, ");
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}

// ---- pipeline ------------------------------------------------------------

TEST(Pipeline, LinearExampleCompletes) {
  TempDir dir;
  const RunResult r = run_pipeline(options(config_path("linear_small.json"), dir / "out"));
  ASSERT_EQ(r.exit_code, 0) << r.message;
  const Json& m = r.manifest;
  EXPECT_EQ(m["schema_version"], kManifestSchemaVersion);
  EXPECT_TRUE(m["stages"]["map"]["converged"].get<bool>());
  EXPECT_LE(m["stages"]["map"]["map_gradnorm_reduction"].get<double>(), 1e-6);
  EXPECT_EQ(m["config"]["seeds"]["data"], 1);
  for (const char* s : {"sample-prior", "map", "spectrum", "variance", "sample-posterior"}) {
    EXPECT_EQ(m["stages"][s]["status"], "ok") << s;
    EXPECT_GE(m["stages"][s]["seconds"].get<double>(), 0.0);
  }
  const Json& spectrum = m["stages"]["spectrum"];
  EXPECT_TRUE(spectrum["truncation_error"].contains("value"));
  EXPECT_TRUE(spectrum["truncation_error"].contains("estimate"));
  EXPECT_EQ(spectrum["lambdas"].size(), spectrum["rank"].get<std::size_t>());
}

TEST(Pipeline, ManifestReferencesEveryFileWithItsChecksum) {
  TempDir dir;
  const RunResult r = run_pipeline(options(config_path("linear_small.json"), dir / "out"));
  ASSERT_EQ(r.exit_code, 0) << r.message;
  std::size_t on_disk = 0;
  for (const auto& entry : fs::directory_iterator(dir / "out")) {
    const std::string name = entry.path().filename().string();
    if (name == "manifest.json")
      continue;
    ++on_disk;
    ASSERT_TRUE(r.manifest["files"].contains(name)) << name;
    const std::string text = io::read_text(entry.path());
    EXPECT_EQ(r.manifest["files"][name]["sha256"], io::sha256_hex(text)) << name;
    EXPECT_EQ(r.manifest["files"][name]["bytes"], text.size()) << name;
  }
  EXPECT_EQ(on_disk, r.manifest["files"].size());
  EXPECT_FALSE(fs::exists(dir / "out" / ".linbayes.lock"));
  for (const char* f : {"truth.csv", "data.csv", "map.csv", "map_history.tsv", "spectrum.csv", "lowrank.json",
                        "eigenvector_1.csv", "prior_variance.csv", "posterior_variance.csv", "prior_sample_0.csv",
                        "posterior_sample_0.csv"})
    EXPECT_TRUE(r.manifest["files"].contains(f)) << f;
}

TEST(Pipeline, IdenticalSeedsGiveIdenticalChecksums) {
  TempDir dir;
  const RunResult a = run_pipeline(options(config_path("linear_small.json"), dir / "a"));
  const RunResult b = run_pipeline(options(config_path("linear_small.json"), dir / "b"));
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_EQ(checksums(a.manifest), checksums(b.manifest));
}

TEST(Pipeline, DataSeedChangesData) {
  TempDir dir;
  RunOptions o = options(config_path("linear_small.json"), dir / "a", {Stage::map});
  const RunResult a = run_pipeline(o);
  o.out = dir / "b";
  o.seed_data = 99;
  const RunResult b = run_pipeline(o);
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_NE(a.manifest["files"]["data.csv"]["sha256"], b.manifest["files"]["data.csv"]["sha256"]);
  EXPECT_EQ(a.manifest["files"]["truth.csv"]["sha256"], b.manifest["files"]["truth.csv"]["sha256"]);
  EXPECT_EQ(b.manifest["config"]["seeds"]["data"], 99);
}

TEST(Pipeline, StagesComposeToTheFullRun) {
  TempDir dir;
  const RunResult full = run_pipeline(options(config_path("linear_small.json"), dir / "full"));
  ASSERT_EQ(full.exit_code, 0);
  RunResult last;
  for (Stage s : all_stages()) {
    last = run_pipeline(options(config_path("linear_small.json"), dir / "staged", {s}));
    ASSERT_EQ(last.exit_code, 0) << stage_name(s) << ": " << last.message;
  }
  EXPECT_EQ(checksums(full.manifest), checksums(last.manifest));
}

TEST(Pipeline, VarianceWithoutSpectrumExitsFive) {
  TempDir dir;
  const RunResult r = run_pipeline(options(config_path("linear_small.json"), dir / "out", {Stage::variance}));
  EXPECT_EQ(r.exit_code, exit_code::missing_stage);
  EXPECT_NE(r.message.find("spectrum"), std::string::npos) << r.message;
  EXPECT_EQ(r.manifest["failure"]["stage"], "variance");
  EXPECT_EQ(r.manifest["failure"]["exit_code"], exit_code::missing_stage);
}

TEST(Pipeline, SpectrumWithoutMapExitsFive) {
  TempDir dir;
  const RunResult r = run_pipeline(options(config_path("linear_small.json"), dir / "out", {Stage::spectrum}));
  EXPECT_EQ(r.exit_code, exit_code::missing_stage);
  EXPECT_NE(r.message.find("'map'"), std::string::npos) << r.message;
}

TEST(Pipeline, ChangedConfigInvalidatesUpstreamStages) {
  TempDir dir;
  RunOptions o = options(config_path("linear_small.json"), dir / "out", {Stage::map, Stage::spectrum});
  ASSERT_EQ(run_pipeline(o).exit_code, 0);
  o.stages = {Stage::variance};
  o.seed_data = 2;
  EXPECT_EQ(run_pipeline(o).exit_code, exit_code::missing_stage);
}

TEST(Pipeline, RerunningMapInvalidatesDownstream) {
  TempDir dir;
  RunOptions o = options(config_path("linear_small.json"), dir / "out", {Stage::map, Stage::spectrum});
  ASSERT_EQ(run_pipeline(o).exit_code, 0);
  o.stages = {Stage::map};
  const RunResult r = run_pipeline(o);
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_FALSE(r.manifest["stages"].contains("spectrum"));
  EXPECT_FALSE(r.manifest["files"].contains("lowrank.json"));
}

TEST(Pipeline, SamplePriorCountAndSeedAreReproducible) {
  TempDir dir;
  RunOptions o = options(config_path("linear_small.json"), dir / "a", {Stage::sample_prior});
  o.count = 4;
  o.seed_sample = 7;
  const RunResult a = run_pipeline(o);
  o.out = dir / "b";
  const RunResult b = run_pipeline(o);
  o.out = dir / "c";
  o.seed_sample = 8;
  const RunResult c = run_pipeline(o);
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.manifest["files"].size(), 4u);
  for (int k = 0; k < 4; ++k)
    EXPECT_TRUE(fs::exists(dir / "a" / ("prior_sample_" + std::to_string(k) + ".csv")));
  EXPECT_EQ(checksums(a.manifest), checksums(b.manifest));
  EXPECT_NE(checksums(a.manifest)["prior_sample_0.csv"], checksums(c.manifest)["prior_sample_0.csv"]);
}

TEST(Pipeline, SpectrumMatchesDenseEigenvalues) {
  TempDir dir;
  const RunResult r = run_pipeline(options(config_path("linear_small.json"), dir / "out", {Stage::map, Stage::spectrum}));
  ASSERT_EQ(r.exit_code, 0) << r.message;
  const Vector lambdas = io::read_csv(dir / "out" / "spectrum.csv").column_values("lambda");

  const Problem p = build_problem(load_config(config_path("linear_small.json")));
  const auto& g = dynamic_cast<const LinearMapModel&>(*p.model).matrix();
  const oracle::LinearGaussian dense{p.prior->mspace().mass().dense(), p.prior->stiffness().dense(), g, p.noise.sigma};
  const Vector exact = dense.h_tilde_eigenvalues();
  const double threshold = p.config.lowrank.trunc_threshold;
  Index expected = 0;
  while (expected < exact.size() && exact[expected] >= threshold)
    ++expected;
  ASSERT_EQ(lambdas.size(), expected);
  for (Index i = 0; i < expected; ++i)
    EXPECT_NEAR(lambdas[i], exact[i], 1e-8 * exact[0]) << i;
}

TEST(Pipeline, NegativeNoiseSigmaExitsTwoWithFieldPath) {
  TempDir dir;
  Json j = config_json("linear_small.json");
  j["observation"]["noise_sigma"] = -0.5;
  const RunResult r = run_pipeline(options(write_config(dir, j), dir / "out"));
  EXPECT_EQ(r.exit_code, exit_code::config);
  EXPECT_NE(r.message.find("observation.noise_sigma"), std::string::npos) << r.message;
}

TEST(Pipeline, MissingConfigFileExitsTwo) {
  TempDir dir;
  EXPECT_EQ(run_pipeline(options(dir / "absent.json", dir / "out")).exit_code, exit_code::config);
}

TEST(Pipeline, HeldLockExitsFour) {
  TempDir dir;
  fs::create_directories(dir / "out");
  io::write_text(dir / "out" / ".linbayes.lock", "1\n");
  const RunResult r = run_pipeline(options(config_path("linear_small.json"), dir / "out"));
  EXPECT_EQ(r.exit_code, exit_code::io);
  EXPECT_TRUE(fs::exists(dir / "out" / ".linbayes.lock"));
}

TEST(Pipeline, UnwritableOutputExitsFour) {
  TempDir dir;
  io::write_text(dir / "file", "x");
  EXPECT_EQ(run_pipeline(options(config_path("linear_small.json"), dir / "file" / "out")).exit_code, exit_code::io);
}

TEST(Pipeline, ModelFailureKeepsPartialArtifacts) {
  TempDir dir;
  Json j = config_json("wave1d_small.json");
  j["truth"]["background"] = -1.0; // nonphysical wave speed
  const RunResult r = run_pipeline(options(write_config(dir, j), dir / "out"));
  EXPECT_EQ(r.exit_code, exit_code::model);
  EXPECT_EQ(r.manifest["failure"]["stage"], "map");
  EXPECT_EQ(r.manifest["stages"]["sample-prior"]["status"], "ok");
  EXPECT_TRUE(fs::exists(dir / "out" / "prior_sample_0.csv"));
  const Json on_disk = Json::parse(io::read_text(dir / "out" / "manifest.json"));
  EXPECT_EQ(on_disk["failure"]["exit_code"], exit_code::model);
  EXPECT_FALSE(fs::exists(dir / "out" / ".linbayes.lock"));
}

TEST(Pipeline, WaveExampleWritesSeismograms) {
  TempDir dir;
  const RunResult r = run_pipeline(options(config_path("wave1d_small.json"), dir / "out", {Stage::map}));
  ASSERT_EQ(r.exit_code, 0) << r.message;
  const io::Table t = io::read_csv(dir / "out" / "seismograms_map.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"time", "receiver_id", "value"}));
  EXPECT_EQ(t.rows.size(), 2u * 100u);
  EXPECT_LE(r.manifest["stages"]["map"]["map_gradnorm_reduction"].get<double>(), 1e-6);
}

} // namespace
} // namespace linbayes
