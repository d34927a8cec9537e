#pragma once

#include "linbayes/sparse.hpp"

#include <type_traits>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <memory>

namespace linbayes {

/// How M^{+-1/2} is realized.
enum class MassSqrt {
  lumped, ///< diagonal of row sums of M
  exact,  ///< dense symmetric square root (test mode, n <= 500)
};

/// R^n with the mass-weighted inner product (u, v)_M = u^T M v.
class MSpace {
public:
  MSpace() = default;

  /// `exact_sqrt` precomputes dense M^{1/2} and M^{-1/2}; only allowed for n <= 500.
  explicit MSpace(SparseSymMatrix mass, SolverOptions opts = {}, bool exact_sqrt = false)
      : solver_(mass, opts), lumped_(mass.row_sums()) {
    if ((lumped_.array() <= 0.0).any())
      throw InvalidArgument("lumped mass diagonal must be strictly positive");
    if (exact_sqrt) {
      if (mass.n() > 500)
        throw InvalidArgument("exact mass square root is limited to n <= 500");
      Eigen::SelfAdjointEigenSolver<Matrix> es(mass.dense());
      if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
        throw InvalidArgument("mass matrix is not positive definite");
      auto sq = std::make_shared<Matrix>(es.operatorSqrt());
      auto isq = std::make_shared<Matrix>(es.operatorInverseSqrt());
      sqrt_ = std::move(sq);
      inv_sqrt_ = std::move(isq);
    }
  }

  Index n() const noexcept { return solver_.n(); }
  const SparseSymMatrix& mass() const { return solver_.matrix(); }
  const Vector& lumped_diag() const noexcept { return lumped_; }
  bool has_exact_sqrt() const noexcept { return static_cast<bool>(sqrt_); }

  Vector apply(const Vector& v) const { return mass().apply(v); }
  Vector solve(const Vector& b) const { return solver_.solve(b); }

  double inner(const Vector& u, const Vector& v) const {
    require_dim("m_inner", n(), u.size());
    require_dim("m_inner", n(), v.size());
    return u.dot(mass().matrix() * v);
  }
  double norm(const Vector& v) const { return std::sqrt(std::max(0.0, inner(v, v))); }

  const Matrix& exact_sqrt() const {
    if (!sqrt_)
      throw PreconditionViolation("exact mass square root was not requested for this MSpace");
    return *sqrt_;
  }
  const Matrix& exact_inv_sqrt() const {
    if (!inv_sqrt_)
      throw PreconditionViolation("exact mass square root was not requested for this MSpace");
    return *inv_sqrt_;
  }

private:
  SpdSolver solver_;
  Vector lumped_;
  std::shared_ptr<const Matrix> sqrt_;
  std::shared_ptr<const Matrix> inv_sqrt_;
};

inline double m_inner(const Vector& u, const Vector& v, const MSpace& ms) { return ms.inner(u, v); }

/// Componentwise scaling by lumped_diag^{power}, power = +0.5 or -0.5.
inline Vector lumped_sqrt_apply(const MSpace& ms, const Vector& v, double power) {
  require_dim("lumped_sqrt_apply", ms.n(), v.size());
  if (power != 0.5 && power != -0.5)
    throw InvalidArgument("lumped_sqrt_apply: power must be +0.5 or -0.5");
  return v.cwiseProduct(ms.lumped_diag().array().pow(power).matrix());
}

/// M^{power} v for power = +-1/2 using the requested realization.
inline Vector mass_sqrt_apply(const MSpace& ms, const Vector& v, double power, MassSqrt mode) {
  if (mode == MassSqrt::lumped)
    return lumped_sqrt_apply(ms, v, power);
  require_dim("mass_sqrt_apply", ms.n(), v.size());
  if (power == 0.5)
    return ms.exact_sqrt() * v;
  if (power == -0.5)
    return ms.exact_inv_sqrt() * v;
  throw InvalidArgument("mass_sqrt_apply: power must be +0.5 or -0.5");
}

/// Domain/codomain of a linear map relative to R^n_M and Euclidean spaces.
enum class MapKind {
  parameter_to_parameter, ///< B : R^n_M -> R^n_M, B* = M^{-1} B^T M
  parameter_to_data,      ///< F : R^n_M -> R^q,   F* = M^{-1} F^T
  data_to_parameter,      ///< V : R^r -> R^n_M,   V* = V^T M
};

/// Applies the M-adjoint of a map given only its Euclidean transpose action.
template <typename TransposeAction>
  requires(!std::is_base_of_v<Eigen::EigenBase<std::decay_t<TransposeAction>>, std::decay_t<TransposeAction>>)
Vector adjoint_apply(MapKind kind, TransposeAction&& transpose, const Vector& v, const MSpace& ms) {
  switch (kind) {
  case MapKind::parameter_to_parameter:
    require_dim("adjoint_apply operand", ms.n(), v.size());
    return ms.solve(transpose(ms.apply(v)));
  case MapKind::parameter_to_data:
    return ms.solve(transpose(v));
  case MapKind::data_to_parameter:
    require_dim("adjoint_apply operand", ms.n(), v.size());
    return transpose(ms.apply(v));
  }
  throw InvalidArgument("adjoint_apply: unknown map kind");
}

/// Dense-matrix overload; checks the operand against the declared shape.
inline Vector adjoint_apply(MapKind kind, const Matrix& op, const Vector& v, const MSpace& ms) {
  switch (kind) {
  case MapKind::parameter_to_parameter:
    require_dim("adjoint_apply operator rows", ms.n(), op.rows());
    require_dim("adjoint_apply operator cols", ms.n(), op.cols());
    break;
  case MapKind::parameter_to_data:
    require_dim("adjoint_apply operator cols", ms.n(), op.cols());
    require_dim("adjoint_apply operand", op.rows(), v.size());
    break;
  case MapKind::data_to_parameter:
    require_dim("adjoint_apply operator rows", ms.n(), op.rows());
    break;
  }
  return adjoint_apply(kind, [&](const Vector& w) -> Vector { return op.transpose() * w; }, v, ms);
}

} // namespace linbayes
