#pragma once

#include "linbayes/mspace.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace linbayes {

struct LanczosOptions {
  Index r_max = 50;
  double eig_tol = 1e-6;         ///< Ritz residual <= eig_tol * max(lambda_1, 1)
  double trunc_threshold = 0.1;  ///< keep lambda >= threshold
  Index max_iters = 0;           ///< Krylov dimension cap; 0 selects min(n, 2 r_max + 20)
  int crossing_patience = 5;     ///< extra steps the threshold crossing must persist
  std::uint64_t seed = 1;
};

/// Leading eigenpairs of an M-self-adjoint PSD operator.
struct EigenDecomposition {
  Vector lambdas;              ///< descending, clamped at 0
  Matrix V;                    ///< n x r, M-orthonormal columns
  Vector residual_norms;       ///< ||H v - lambda v||_M per pair (Lanczos estimate)
  Vector discarded_ritz;       ///< converged Ritz values below the threshold, descending
  bool spectrum_truncated = false; ///< r_max or the iteration cap hit before crossing the threshold
  bool tail_exact = false;     ///< the Krylov space became invariant: discarded_ritz is the full tail
  Index krylov_dim = 0;
  std::string diagnostic;

  Index rank() const { return lambdas.size(); }
};

/// M-inner-product Lanczos with full reorthogonalization from a seeded random
/// start vector. Returns converged pairs with lambda >= trunc_threshold
/// (at most r_max), sorted descending.
inline EigenDecomposition lanczos_eigs(const std::function<Vector(const Vector&)>& op, const MSpace& ms,
                                       const LanczosOptions& opts) {
  const Index n = ms.n();
  if (opts.r_max < 0 || opts.r_max > n)
    throw InvalidArgument("lanczos_eigs: r_max must lie in [0, n]");
  if (!(opts.eig_tol > 0.0))
    throw InvalidArgument("lanczos_eigs: eig_tol must be positive");
  const Index max_iters =
      std::min(n, opts.max_iters > 0 ? opts.max_iters : std::max<Index>(2 * opts.r_max + 20, 1));

  EigenDecomposition out;
  out.lambdas.resize(0);
  out.V.resize(n, 0);
  out.residual_norms.resize(0);
  if (opts.r_max == 0 || n == 0) {
    out.diagnostic = "r_max = 0";
    return out;
  }

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector q(n);
  for (Index i = 0; i < n; ++i)
    q[i] = normal(rng);
  q /= ms.norm(q);

  Matrix Q(n, max_iters);  // Lanczos basis
  Matrix MQ(n, max_iters); // M * basis, for cheap reorthogonalization
  std::vector<double> alpha, beta;
  Vector theta;
  Matrix S;
  bool breakdown = false;
  double b_last = 0.0;
  int crossed_streak = 0;
  Index j = 0;

  for (; j < max_iters; ++j) {
    Q.col(j) = q;
    MQ.col(j) = ms.apply(q);
    Vector w = op(q);
    const double a = MQ.col(j).dot(w);
    alpha.push_back(a);
    w -= a * q;
    if (j > 0)
      w -= beta.back() * Q.col(j - 1);
    for (int pass = 0; pass < 2; ++pass)
      w -= Q.leftCols(j + 1) * (MQ.leftCols(j + 1).transpose() * w);
    const double b = ms.norm(w);
    b_last = b;

    const Index m = j + 1;
    Matrix T = Matrix::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
      T(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < m)
        T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(T);
    // Descending order.
    theta = es.eigenvalues().reverse();
    S = es.eigenvectors().rowwise().reverse();
    const double scale = std::max(std::abs(theta[0]), 1.0);
    breakdown = b <= 1e-12 * std::max(scale, std::abs(a));

    Index kept = 0;
    bool crossed = false;
    for (Index i = 0; i < m; ++i) {
      const double res = breakdown ? 0.0 : std::abs(b * S(m - 1, i));
      if (res > opts.eig_tol * scale)
        break; // top block of converged pairs ends here
      if (theta[i] >= opts.trunc_threshold)
        ++kept;
      else {
        crossed = true;
        break;
      }
    }
    // Ritz values only grow with the Krylov space, so an eigenvalue above the
    // threshold that the start vector barely sees shows up as a late riser.
    // Keep iterating until the crossing has held for a few steps.
    crossed_streak = crossed ? crossed_streak + 1 : 0;
    if (breakdown || crossed_streak > opts.crossing_patience || kept >= opts.r_max) {
      ++j;
      break;
    }
    beta.push_back(b);
    q = w / b;
  }
  const Index m = std::min(j, max_iters);
  out.krylov_dim = m;
  out.tail_exact = breakdown;

  const double scale = std::max(std::abs(theta[0]), 1.0);
  const double b_final = breakdown ? 0.0 : b_last;

  std::vector<Index> keep;
  std::vector<double> discarded;
  bool top_block = true;
  for (Index i = 0; i < m; ++i) {
    const double res = std::abs(b_final * S(m - 1, i));
    const bool converged = res <= opts.eig_tol * scale;
    if (!converged)
      top_block = false;
    const double lam = std::max(theta[i], 0.0);
    if (converged && top_block && lam >= opts.trunc_threshold && static_cast<Index>(keep.size()) < opts.r_max)
      keep.push_back(i);
    else if (converged && lam < opts.trunc_threshold)
      discarded.push_back(lam);
  }

  const Index r = static_cast<Index>(keep.size());
  out.lambdas.resize(r);
  out.residual_norms.resize(r);
  out.V = Matrix(n, r);
  for (Index c = 0; c < r; ++c) {
    const Index i = keep[static_cast<std::size_t>(c)];
    out.lambdas[c] = std::max(theta[i], 0.0);
    out.residual_norms[c] = std::abs(b_final * S(m - 1, i));
    out.V.col(c) = Q.leftCols(m) * S.col(i);
  }
  out.discarded_ritz = Eigen::Map<Vector>(discarded.data(), static_cast<Index>(discarded.size()));

  const bool below_found = !discarded.empty() || breakdown;
  out.spectrum_truncated = !below_found && r > 0 && out.lambdas[r - 1] > opts.trunc_threshold;
  if (r == 0 && !below_found)
    out.diagnostic = "no Ritz pair converged within the iteration cap";
  else if (breakdown)
    out.diagnostic = "Krylov space became invariant";
  else if (out.spectrum_truncated)
    out.diagnostic = "r_max or the iteration cap reached before the spectrum dropped below the threshold";
  else
    out.diagnostic = "spectrum captured down to the threshold";
  return out;
}

/// Keeps the leading r pairs; the dropped eigenvalues join the discarded tail.
inline EigenDecomposition truncate(const EigenDecomposition& eig, Index r) {
  if (r < 0 || r > eig.rank())
    throw InvalidArgument("truncate: rank out of range");
  EigenDecomposition out = eig;
  out.lambdas = eig.lambdas.head(r);
  out.V = eig.V.leftCols(r);
  out.residual_norms = eig.residual_norms.head(r);
  out.discarded_ritz.resize(eig.rank() - r + eig.discarded_ritz.size());
  out.discarded_ritz << eig.lambdas.tail(eig.rank() - r), eig.discarded_ritz;
  return out;
}

struct TruncationBound {
  double value = 0.0;
  bool estimate = false; ///< true when the tail was not computed exactly
};

/// sum lambda_i / (lambda_i + 1) over the discarded eigenvalues.
inline double truncation_error_bound(std::span<const double> discarded) {
  double s = 0.0;
  for (double lam : discarded)
    s += lam / (lam + 1.0);
  return s;
}

inline TruncationBound truncation_error_bound(const EigenDecomposition& eig) {
  const std::span<const double> tail(eig.discarded_ritz.data(), static_cast<std::size_t>(eig.discarded_ritz.size()));
  return {truncation_error_bound(tail), !eig.tail_exact};
}

} // namespace linbayes
