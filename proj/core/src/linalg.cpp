#include "batchal/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "batchal/error.hpp"

namespace batchal {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kReorthFraction = 1e-3;
// Residuals shorter than this fraction of the input are treated as exact
// linear dependence by gram_logdet_by_residuals.
constexpr double kRankTol = 64.0 * std::numeric_limits<double>::epsilon();

void sweep(const OrthoBasis& basis, Vector& r, InnerProductCounter* counter) {
  for (const Vector& q : basis.vectors()) {
    r.noalias() -= dot(q, r, counter) * q;
  }
}

}  // namespace

double dot(const Vector& a, const Vector& b, InnerProductCounter* counter) {
  if (a.size() != b.size()) {
    throw Error(Errc::DimensionMismatch, "dot: length mismatch");
  }
  if (counter) ++counter->count;
  return sequential_dot(a.data(), b.data(), static_cast<std::size_t>(a.size()));
}

double sequential_dot(const double* a, const double* b, std::size_t n) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double cholesky_logdet(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error(Errc::DimensionMismatch, "cholesky_logdet: matrix is " +
                                             std::to_string(m.rows()) + "x" +
                                             std::to_string(m.cols()));
  }
  const Eigen::Index n = m.rows();
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > kSymmetryTol * scale) {
        throw Error(Errc::NotSymmetric, "cholesky_logdet: asymmetric at (" +
                                            std::to_string(i) + "," +
                                            std::to_string(j) + ")");
      }
    }
  }

  // Lower factor, column by column (Cholesky-Banachiewicz).
  Matrix l = Matrix::Zero(n, n);
  double logdet = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = m(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0)) {
      throw Error(Errc::NotPositiveDefinite,
                  "cholesky_logdet: non-positive pivot at " + std::to_string(j));
    }
    const double d = std::sqrt(pivot);
    l(j, j) = d;
    logdet += 2.0 * std::log(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / d;
    }
  }
  return logdet;
}

bool OrthoBasis::try_append(const Vector& residual, double min_norm) {
  if (static_cast<std::size_t>(residual.size()) != dim_) {
    throw Error(Errc::DimensionMismatch, "basis_extend: residual has dimension " +
                                             std::to_string(residual.size()) +
                                             ", basis has " + std::to_string(dim_));
  }
  const double norm = residual.norm();
  if (!(norm >= min_norm) || norm == 0.0 || vectors_.size() >= dim_) return false;
  vectors_.push_back(residual / norm);
  return true;
}

Residual mgs_residual(const OrthoBasis& basis, const Vector& v,
                      InnerProductCounter* counter) {
  if (static_cast<std::size_t>(v.size()) != basis.dim()) {
    throw Error(Errc::DimensionMismatch, "mgs_residual: vector has dimension " +
                                             std::to_string(v.size()) +
                                             ", basis has " + std::to_string(basis.dim()));
  }
  Residual out{v, 0.0};
  if (basis.empty()) {
    out.sq_norm = dot(v, v, counter);
    return out;
  }
  sweep(basis, out.residual, counter);
  out.sq_norm = dot(out.residual, out.residual, counter);
  const double v_sq = v.squaredNorm();
  if (out.sq_norm < kReorthFraction * kReorthFraction * v_sq) {
    sweep(basis, out.residual, counter);
    out.sq_norm = dot(out.residual, out.residual, counter);
  }
  return out;
}

ExtendResult basis_extend(OrthoBasis basis, const Vector& residual, double min_norm) {
  ExtendResult out{std::move(basis), false};
  out.saturated = !out.basis.try_append(residual, min_norm);
  return out;
}

double gram_logdet_by_residuals(std::span<const Vector> vectors) {
  if (vectors.empty()) return 0.0;
  OrthoBasis basis(static_cast<std::size_t>(vectors.front().size()));
  double logdet = 0.0;
  for (const Vector& v : vectors) {
    Residual r = mgs_residual(basis, v);
    const double v_norm = v.norm();
    if (v_norm == 0.0 || std::sqrt(r.sq_norm) <= kRankTol * v_norm) {
      return -std::numeric_limits<double>::infinity();
    }
    logdet += std::log(r.sq_norm);
    basis.try_append(r.residual, 0.0);
  }
  return logdet;
}

Matrix gram_matrix(std::span<const Vector> vectors) {
  const auto n = static_cast<Eigen::Index>(vectors.size());
  Matrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      g(i, j) = g(j, i) = vectors[i].dot(vectors[j]);
    }
  }
  return g;
}

}  // namespace batchal
