#pragma once

// Dense reference algebra used only by tests. Everything here is computed by
// explicit factorizations of small dense matrices, independently of the
// matrix-free code paths under test.

#include "linbayes/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <functional>
#include <random>

namespace linbayes::oracle {

inline Vector random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i)
    v[i] = normal(rng);
  return v;
}

/// Columns op(e_j).
inline Matrix densify(const std::function<Vector(const Vector&)>& op, Index n) {
  Matrix out;
  for (Index j = 0; j < n; ++j) {
    Vector e = Vector::Zero(n);
    e[j] = 1.0;
    const Vector col = op(e);
    if (j == 0)
      out.resize(col.size(), n);
    out.col(j) = col;
  }
  return out;
}

inline Matrix inverse_spd(const Matrix& a) { return a.llt().solve(Matrix::Identity(a.rows(), a.cols())); }

inline Matrix sym_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  return es.operatorSqrt();
}

/// ||E||_{M -> M} for an M-self-adjoint or general E: spectral norm of M^{1/2} E M^{-1/2}.
inline double m_operator_norm(const Matrix& e, const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Matrix sq = es.operatorSqrt();
  const Matrix isq = es.operatorInverseSqrt();
  const Matrix t = sq * e * isq;
  Eigen::JacobiSVD<Matrix> svd(t);
  return svd.singularValues()(0);
}

/// Dense linear-Gaussian problem: f(m) = G m, Gamma_noise = sigma^2 I,
/// Gamma_prior = K^{-1} M K^{-1} M.
struct LinearGaussian {
  Matrix M, K, G;
  double sigma = 1.0;

  Matrix gamma_prior() const {
    const Matrix kinv_m = K.llt().solve(M);
    return kinv_m * kinv_m;
  }
  Matrix gamma_prior_sqrt() const { return K.llt().solve(M); }
  Matrix gamma_prior_inv() const {
    const Matrix minv_k = M.llt().solve(K);
    return minv_k * minv_k;
  }
  Matrix h_misfit() const { return M.llt().solve(G.transpose() * G) / (sigma * sigma); }
  Matrix gamma_post() const {
    const Matrix h = h_misfit() + gamma_prior_inv();
    return h.lu().inverse();
  }
  /// Solves (H_misfit + Gamma_prior^{-1})(m - m0) = M^{-1} G^T (y - G m0) / sigma^2.
  Vector map_point(const Vector& y, const Vector& m0) const {
    const Matrix h = h_misfit() + gamma_prior_inv();
    const Vector rhs = M.llt().solve(G.transpose() * (y - G * m0)) / (sigma * sigma);
    return m0 + h.lu().solve(rhs);
  }
  /// Prior-preconditioned Hessian as a dense matrix.
  Matrix h_tilde() const {
    const Matrix s = gamma_prior_sqrt();
    return s * h_misfit() * s;
  }
  /// Eigenvalues (descending) of H_tilde via the generalized problem (M H_tilde) x = lambda M x.
  Vector h_tilde_eigenvalues() const {
    Matrix a = M * h_tilde();
    a = (0.5 * (a + a.transpose())).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(a, M);
    return es.eigenvalues().reverse();
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> h_tilde_eigensolver() const {
    Matrix a = M * h_tilde();
    a = (0.5 * (a + a.transpose())).eval();
    return Eigen::GeneralizedSelfAdjointEigenSolver<Matrix>(a, M);
  }
};

inline double rel_frobenius(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

} // namespace linbayes::oracle
