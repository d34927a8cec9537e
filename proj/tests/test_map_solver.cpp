#include "linbayes/map_solver.hpp"
#include "linbayes/pipeline/problem.hpp"
#include "support/dense_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

namespace linbayes {
namespace {

using oracle::random_vector;

Problem load_problem(const char* name) { return build_problem(load_config(std::string(LINBAYES_CONFIG_DIR) + "/" + name)); }

oracle::LinearGaussian dense_of(const Problem& p) {
  const auto& g = dynamic_cast<const LinearMapModel&>(*p.model).matrix();
  return {p.prior->mspace().mass().dense(), p.prior->stiffness().dense(), g, p.noise.sigma};
}

class LinearMap : public ::testing::Test {
protected:
  Problem p = load_problem("linear_small.json");
  oracle::LinearGaussian dense = dense_of(p);
  Vector y = p.synthesize();
  std::mt19937_64 rng{3};

  double m_norm(const Vector& v) const { return p.prior->mspace().norm(v); }
};

TEST_F(LinearMap, ObjectiveAtPriorMean) {
  const Vector& m0 = p.prior->mean();
  EXPECT_EQ(objective(*p.prior, *p.model, p.model->observe(m0), p.noise, m0), 0.0);
  const Vector r = p.model->observe(m0) - y;
  EXPECT_NEAR(objective(*p.prior, *p.model, y, p.noise, m0), 0.5 * r.squaredNorm() / std::pow(p.noise.sigma, 2),
              1e-14 * r.squaredNorm());
}

TEST_F(LinearMap, ObjectiveMatchesDenseQuadratic) {
  const Vector m = 300.0 * random_vector(p.prior->n(), rng);
  const Vector r = dense.G * m - y;
  const Vector d = m - p.prior->mean();
  const Vector kd = dense.K * d;
  const double expected = 0.5 * r.squaredNorm() / std::pow(dense.sigma, 2) + 0.5 * kd.dot(dense.M.llt().solve(kd));
  EXPECT_NEAR(objective(*p.prior, *p.model, y, p.noise, m), expected, 1e-10 * expected);
}

TEST_F(LinearMap, GradientMatchesDenseOracle) {
  const Vector m = 300.0 * random_vector(p.prior->n(), rng);
  const Vector expected = dense.h_misfit() * m - dense.M.llt().solve(dense.G.transpose() * y) / std::pow(dense.sigma, 2) +
                          dense.gamma_prior_inv() * (m - p.prior->mean());
  EXPECT_LT((gradient(*p.prior, *p.model, y, p.noise, m) - expected).norm(), 1e-11 * expected.norm());
}

TEST_F(LinearMap, GradientVanishesAtExactPriorMean) {
  const Vector& m0 = p.prior->mean();
  EXPECT_EQ(m_norm(gradient(*p.prior, *p.model, p.model->observe(m0), p.noise, m0)), 0.0);
}

TEST_F(LinearMap, GradientMatchesCentralDifferences) {
  const Vector m = 300.0 * random_vector(p.prior->n(), rng);
  const Vector g = gradient(*p.prior, *p.model, y, p.noise, m);
  for (int t = 0; t < 10; ++t) {
    const Vector v = 300.0 * random_vector(p.prior->n(), rng);
    const double eps = 1e-3;
    const double fd = (objective(*p.prior, *p.model, y, p.noise, m + eps * v) -
                       objective(*p.prior, *p.model, y, p.noise, m - eps * v)) /
                      (2 * eps);
    const double an = p.prior->mspace().inner(g, v);
    EXPECT_LT(std::abs(fd - an), 1e-6 * std::abs(an));
  }
}

TEST_F(LinearMap, FindMapMatchesNormalEquations) {
  const MapResult r = find_map(*p.prior, *p.model, y, p.noise, p.prior->mean());
  ASSERT_TRUE(r.converged) << r.termination;
  const Vector expected = dense.map_point(y, p.prior->mean());
  EXPECT_LE(r.gradnorm_history.back(), 1e-6 * r.gradnorm_history.front());
  // The stopping rule bounds the error by ||H^{-1}||_M ||g||_M.
  const Matrix h = dense.h_misfit() + dense.gamma_prior_inv();
  const double hinv_norm = oracle::m_operator_norm(h.lu().inverse(), dense.M);
  EXPECT_LE(m_norm(r.m_map - expected), hinv_norm * r.gradnorm_history.back() * (1 + 1e-8));
  for (std::size_t k = 1; k < r.objective_history.size(); ++k)
    EXPECT_LT(r.objective_history[k], r.objective_history[k - 1]);
  for (double s : r.descent_slopes)
    EXPECT_LT(s, 0.0);
}

TEST_F(LinearMap, TightCgConvergesInOneNewtonStep) {
  MapSolverConfig cfg;
  cfg.forcing_max = 1e-12;
  const MapResult r = find_map(*p.prior, *p.model, y, p.noise, p.prior->mean(), cfg);
  ASSERT_TRUE(r.converged) << r.termination;
  EXPECT_EQ(r.newton_iters, 1);
  EXPECT_EQ(r.step_lengths.front(), 1.0);
  const Vector expected = dense.map_point(y, p.prior->mean());
  EXPECT_LT(m_norm(r.m_map - expected), 1e-6 * m_norm(expected));
}

TEST_F(LinearMap, ExactDataAtPriorMeanNeedsNoIterations) {
  const Vector& m0 = p.prior->mean();
  const MapResult r = find_map(*p.prior, *p.model, p.model->observe(m0), p.noise, m0);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.newton_iters, 0);
  EXPECT_EQ(r.m_map, m0);
}

TEST_F(LinearMap, CgDirectionIsDescent) {
  const LinearizationPtr lin = p.model->linearize(p.prior->mean());
  for (int t = 0; t < 5; ++t) {
    const Vector g = random_vector(p.prior->n(), rng);
    for (double tol : {0.5, 1e-3, 1e-10}) {
      const detail::CgOutcome cg = detail::gauss_newton_cg(*p.prior, lin, p.noise, g, tol, 200);
      EXPECT_LT(p.prior->mspace().inner(g, cg.step), 0.0);
      EXPECT_FALSE(cg.negative_curvature);
    }
  }
}

TEST_F(LinearMap, LogLinesAreTabSeparated) {
  std::ostringstream log;
  const MapResult r = find_map(*p.prior, *p.model, y, p.noise, p.prior->mean(), {}, &log);
  std::istringstream in(log.str());
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4) << line;
    EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(count));
    ++count;
  }
  EXPECT_EQ(count, r.newton_iters + 1);
}

TEST(MapSolverConfig, RejectsInvalidSettings) {
  MapSolverConfig c;
  c.backtrack_factor = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.grad_tol_rel = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_cg_iters = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(MapSolverConfig{}.validate());
}

// Linear model that refuses every point but the start, as a wave model does
// outside its admissible set.
class Fenced final : public ForwardModel {
public:
  Fenced(Matrix g, Vector allowed) : inner_(std::move(g)), allowed_(std::move(allowed)) {}
  Index parameter_dim() const override { return inner_.parameter_dim(); }
  Index observation_dim() const override { return inner_.observation_dim(); }
  Vector observe(const Vector& m) const override {
    check(m);
    return inner_.observe(m);
  }
  LinearizationPtr linearize(const Vector& m) const override {
    check(m);
    return inner_.linearize(m);
  }

private:
  void check(const Vector& m) const {
    if (m != allowed_)
      throw InvalidParameter("outside the admissible set");
  }
  LinearMapModel inner_;
  Vector allowed_;
};

TEST_F(LinearMap, LineSearchFailureReturnsBestIterate) {
  const Vector m0 = p.prior->mean();
  const Fenced fenced(dense.G, m0);
  MapResult r;
  ASSERT_NO_THROW(r = find_map(*p.prior, fenced, y, p.noise, m0));
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.termination, "line search failed");
  EXPECT_EQ(r.m_map, m0);
}

TEST(MapSolverMeshStability, CgIterationsAcrossResolutions) {
  // Same 1D desk problem on n and ~4n parameter nodes.
  auto total_cg = [](Index elements) {
    const Mesh mesh = build_mesh_1d(elements, 0.0, 1.0);
    const PriorModel prior =
        PriorModel::build(mesh, 10.0, IsotropicTheta{0.01}, Vector::Zero(mesh.num_nodes()));
    std::vector<Point> pts;
    for (int i = 0; i < 12; ++i)
      pts.push_back({0.05 + 0.9 * i / 11.0, 0.0});
    const LinearMapModel model(make_kernel_average_map(mesh, prior.mspace(), pts, 0.04));
    FieldSpec truth{0.0, {Bump{{0.3, 0}, 0.1, 0.2}, Bump{{0.7, 0}, 0.08, -0.15}}};
    const Vector y = synthesize_data(model, truth.evaluate(mesh), 1e-3, 5);
    const MapResult r = find_map(prior, model, y, GaussianNoise{1e-3}, prior.mean());
    EXPECT_TRUE(r.converged);
    return r.cg_iters_total;
  };
  const int coarse = total_cg(25), fine = total_cg(100);
  EXPECT_LE(std::abs(fine - coarse), 0.5 * std::min(coarse, fine)) << coarse << " vs " << fine;
}

TEST(WaveMap, DeskProblemConverges) {
  const Problem p = load_problem("wave1d_small.json");
  const Vector y = p.synthesize();
  const MapResult r = find_map(*p.prior, *p.model, y, p.noise, p.prior->mean(), p.config.solver);
  ASSERT_TRUE(r.converged) << r.termination;
  EXPECT_LE(r.gradnorm_history.back(), 1e-6 * r.gradnorm_history.front());
  for (std::size_t k = 1; k < r.objective_history.size(); ++k)
    EXPECT_LT(r.objective_history[k], r.objective_history[k - 1]);
  for (double s : r.descent_slopes)
    EXPECT_LT(s, 0.0);
  // The MAP point is closer to the truth than the prior mean is.
  const MSpace& ms = p.prior->mspace();
  EXPECT_LT(ms.norm(r.m_map - p.truth), ms.norm(p.prior->mean() - p.truth));
}

TEST(WaveMap, GradientMatchesCentralDifferences) {
  const Problem p = load_problem("wave1d_small.json");
  const Vector y = p.synthesize();
  std::mt19937_64 rng(8);
  const Vector m = p.prior->mean() + 0.5 * (p.truth - p.prior->mean());
  const Vector g = gradient(*p.prior, *p.model, y, p.noise, m);
  for (int t = 0; t < 10; ++t) {
    const Vector v = sample_prior(*p.prior, random_vector(p.prior->n(), rng)) - p.prior->mean();
    const double eps = 1e-4;
    const double fd = (objective(*p.prior, *p.model, y, p.noise, m + eps * v) -
                       objective(*p.prior, *p.model, y, p.noise, m - eps * v)) /
                      (2 * eps);
    const double an = p.prior->mspace().inner(g, v);
    EXPECT_LT(std::abs(fd - an), 1e-6 * std::abs(an));
  }
}

} // namespace
} // namespace linbayes
