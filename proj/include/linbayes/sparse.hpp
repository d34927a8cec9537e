#pragma once

#include "linbayes/core.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <algorithm>
#include <memory>
#include <optional>

namespace linbayes {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, Index>;

/// Symmetric sparse matrix with both triangles stored.
class SparseSymMatrix {
public:
  SparseSymMatrix() = default;

  /// Takes ownership of `m`; rejects non-square or asymmetric input.
  explicit SparseSymMatrix(SparseMatrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols())
      throw InvalidArgument("symmetric matrix must be square");
    m_.makeCompressed();
    const SparseMatrix t = m_.transpose();
    if ((m_ - t).norm() != 0.0)
      throw InvalidArgument("matrix is not exactly symmetric");
  }

  Index n() const noexcept { return m_.rows(); }
  const SparseMatrix& matrix() const noexcept { return m_; }

  Vector apply(const Vector& v) const {
    require_dim("SparseSymMatrix::apply", n(), v.size());
    return m_ * v;
  }

  Vector diagonal() const { return m_.diagonal(); }
  Vector row_sums() const { return m_ * Vector::Ones(n()); }
  Matrix dense() const { return Matrix(m_); }

private:
  SparseMatrix m_;
};

enum class SolverKind {
  pcg_jacobi,      ///< Jacobi-preconditioned conjugate gradients
  sparse_cholesky, ///< simplicial LLT factorization, reused across solves
};

struct SolverOptions {
  SolverKind kind = SolverKind::pcg_jacobi;
  double rel_tol = 1e-12;
  Index max_iters = 0; ///< 0 selects max(100, 10 n)
};

struct PcgReport {
  Index iterations = 0;
  double relative_residual = 0.0;
};

/// Jacobi-preconditioned CG on an SPD matrix. Stops once the true residual
/// satisfies ||A x - b|| <= rel_tol ||b||; throws SolverFailure at the cap.
inline Vector pcg_jacobi(const SparseMatrix& a, const Vector& inv_diag, const Vector& b, double rel_tol,
                         Index max_iters, PcgReport* report = nullptr) {
  const Index n = a.rows();
  require_dim("solve_spd rhs", n, b.size());
  Vector x = Vector::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    if (report)
      *report = {};
    return x;
  }
  if (max_iters <= 0)
    max_iters = std::max<Index>(100, 10 * n);
  Vector r = b;
  Vector z = inv_diag.cwiseProduct(r);
  Vector p = z;
  double rz = r.dot(z);
  Index it = 0;
  double rel = 1.0;
  // Recursive residual drives the loop; the true residual is checked at exit
  // and at most a few restarts recover the drift between the two.
  for (int restart = 0; restart < 4; ++restart) {
    for (; it < max_iters; ++it) {
      if (r.norm() <= 0.5 * rel_tol * bnorm)
        break;
      const Vector ap = a * p;
      const double pap = p.dot(ap);
      if (!(pap > 0.0))
        break;
      const double step = rz / pap;
      x.noalias() += step * p;
      r.noalias() -= step * ap;
      z = inv_diag.cwiseProduct(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    r = b - a * x;
    rel = r.norm() / bnorm;
    if (rel <= rel_tol || it >= max_iters)
      break;
    z = inv_diag.cwiseProduct(r);
    p = z;
    rz = r.dot(z);
  }
  if (report)
    *report = {it, rel};
  if (rel > rel_tol)
    throw SolverFailure("PCG did not converge", rel, it);
  return x;
}

/// One-shot SPD solve with Jacobi PCG.
inline Vector solve_spd(const SparseSymMatrix& a, const Vector& rhs, double tol = 1e-12, Index max_iters = 0) {
  const Vector inv_diag = a.diagonal().cwiseInverse();
  return pcg_jacobi(a.matrix(), inv_diag, rhs, tol, max_iters);
}

/// Reusable solve context for a fixed SPD matrix. Immutable after construction;
/// each solve allocates its own scratch so concurrent const use is safe.
class SpdSolver {
public:
  SpdSolver() = default;

  explicit SpdSolver(SparseSymMatrix a, SolverOptions opts = {})
      : a_(std::make_shared<SparseSymMatrix>(std::move(a))), opts_(opts) {
    const Vector d = a_->diagonal();
    if ((d.array() <= 0.0).any())
      throw InvalidArgument("SPD solver: nonpositive diagonal entry");
    inv_diag_ = d.cwiseInverse();
    if (opts_.kind == SolverKind::sparse_cholesky) {
      auto llt = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>(a_->matrix());
      if (llt->info() != Eigen::Success)
        throw InvalidArgument("SPD solver: Cholesky factorization failed (matrix not SPD)");
      llt_ = std::move(llt);
    }
  }

  Index n() const noexcept { return a_ ? a_->n() : 0; }
  const SparseSymMatrix& matrix() const { return *a_; }
  const SolverOptions& options() const noexcept { return opts_; }

  Vector solve(const Vector& b) const {
    require_dim("SpdSolver::solve", n(), b.size());
    if (llt_)
      return llt_->solve(b);
    return pcg_jacobi(a_->matrix(), inv_diag_, b, opts_.rel_tol, opts_.max_iters);
  }

private:
  std::shared_ptr<const SparseSymMatrix> a_;
  SolverOptions opts_{};
  Vector inv_diag_;
  std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> llt_;
};

} // namespace linbayes
