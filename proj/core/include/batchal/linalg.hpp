#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace batchal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Counts length-K inner products so callers can audit the cost of a
// selection pass.
struct InnerProductCounter {
  std::size_t count = 0;
};

// Left-to-right summation, independent of alignment or vector width, so the
// same inputs always round the same way.
double sequential_dot(const double* a, const double* b, std::size_t n) noexcept;
double dot(const Vector& a, const Vector& b, InnerProductCounter* counter = nullptr);

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
///
/// Throws NotSymmetric if any |m(i,j) - m(j,i)| exceeds 1e-10 relative to the
/// largest entry magnitude, and NotPositiveDefinite on a non-positive pivot.
/// No jitter is added here; callers regularize explicitly.
double cholesky_logdet(const Matrix& m);

/// Ordered orthonormal family in R^dim.
class OrthoBasis {
 public:
  explicit OrthoBasis(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  bool empty() const noexcept { return vectors_.empty(); }
  const std::vector<Vector>& vectors() const noexcept { return vectors_; }
  const Vector& operator[](std::size_t i) const { return vectors_[i]; }

  // Appends residual / |residual| when |residual| >= min_norm. Returns false
  // (and leaves the basis untouched) when the residual is too short.
  bool try_append(const Vector& residual, double min_norm);

 private:
  std::size_t dim_;
  std::vector<Vector> vectors_;
};

struct Residual {
  Vector residual;
  double sq_norm = 0.0;
};

/// Modified Gram-Schmidt residual of v against the basis: projections are
/// subtracted one basis vector at a time from the running residual. A second
/// sweep runs when the first leaves less than 1e-3 of |v|.
Residual mgs_residual(const OrthoBasis& basis, const Vector& v,
                      InnerProductCounter* counter = nullptr);

struct ExtendResult {
  OrthoBasis basis;
  bool saturated = false;
};

/// Value-returning form of OrthoBasis::try_append. On saturation the input
/// basis is returned unchanged with saturated set.
ExtendResult basis_extend(OrthoBasis basis, const Vector& residual, double min_norm);

/// log det of the Gram matrix of `vectors`, accumulated as the sum of
/// log |r_k|^2 over sequential MGS residuals. Returns -infinity when the
/// family is numerically rank deficient.
double gram_logdet_by_residuals(std::span<const Vector> vectors);

/// Gram matrix G(i,j) = <v_i, v_j>.
Matrix gram_matrix(std::span<const Vector> vectors);

}  // namespace batchal
