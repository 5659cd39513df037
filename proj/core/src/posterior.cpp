#include "batchal/posterior.hpp"

#include <string>

#include "batchal/error.hpp"
#include "batchal/rng.hpp"

namespace batchal {

namespace {

void check_candidates(const Matrix& features, std::span<const Triplet> triplets,
                      std::span<const TripletId> candidates) {
  const auto n = static_cast<ObjectId>(features.rows());
  for (TripletId id : candidates) {
    if (id >= triplets.size()) {
      throw Error(Errc::IndexOutOfRange, "candidate id " + std::to_string(id) + " out of range");
    }
    const Triplet& t = triplets[id];
    if (t.i >= n || t.j >= n || t.k >= n) {
      throw Error(Errc::IndexOutOfRange, "candidate " + std::to_string(id) +
                                             " references a missing object");
    }
  }
}

// Embeds only the objects the candidates touch; rows of the result are
// indexed by object id (untouched rows are left zero).
Matrix embed_needed(const EmbeddingParams& params, const Matrix& features,
                    const std::vector<ObjectId>& objects, const DropoutPlan* plan) {
  Matrix x(static_cast<Eigen::Index>(objects.size()), features.cols());
  for (std::size_t r = 0; r < objects.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(objects[r]));
  }
  const Matrix e = embed_all(params, x, plan);
  Matrix out = Matrix::Zero(features.rows(), e.cols());
  for (std::size_t r = 0; r < objects.size(); ++r) {
    out.row(static_cast<Eigen::Index>(objects[r])) = e.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

std::vector<ObjectId> touched_objects(const Matrix& features, std::span<const Triplet> triplets,
                                      std::span<const TripletId> candidates) {
  std::vector<char> used(static_cast<std::size_t>(features.rows()), 0);
  for (TripletId id : candidates) {
    const Triplet& t = triplets[id];
    used[t.i] = used[t.j] = used[t.k] = 1;
  }
  std::vector<ObjectId> out;
  for (std::size_t o = 0; o < used.size(); ++o) {
    if (used[o]) out.push_back(o);
  }
  return out;
}

}  // namespace

double CenteredMargins::covariance(std::size_t s, std::size_t t) const {
  const double denom = static_cast<double>(centered.cols() - 1);
  const Vector us = centered.row(static_cast<Eigen::Index>(s)).transpose();
  const Vector ut = centered.row(static_cast<Eigen::Index>(t)).transpose();
  return sequential_dot(us.data(), ut.data(), static_cast<std::size_t>(us.size())) / denom;
}

Matrix CenteredMargins::covariance_of(std::span<const std::size_t> positions) const {
  const auto b = static_cast<Eigen::Index>(positions.size());
  Matrix cov(b, b);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) {
      cov(r, c) = cov(c, r) = covariance(positions[static_cast<std::size_t>(r)],
                                         positions[static_cast<std::size_t>(c)]);
    }
  }
  return cov;
}

CenteredMargins CenteredMargins::subset(std::span<const std::size_t> positions) const {
  CenteredMargins out;
  const auto b = static_cast<Eigen::Index>(positions.size());
  out.means.resize(b);
  out.variances.resize(b);
  out.centered.resize(b, centered.cols());
  for (Eigen::Index r = 0; r < b; ++r) {
    const auto p = static_cast<Eigen::Index>(positions[static_cast<std::size_t>(r)]);
    out.candidate_ids.push_back(candidate_ids[static_cast<std::size_t>(p)]);
    out.means(r) = means(p);
    out.variances(r) = variances(p);
    out.centered.row(r) = centered.row(p);
  }
  return out;
}

MarginSampleMatrix sample_margins(const EmbeddingParams& params, const Matrix& features,
                                  std::span<const Triplet> triplets,
                                  std::span<const TripletId> candidates,
                                  const SamplingConfig& config) {
  if (config.passes < 2) throw Error(Errc::InvalidArgument, "sample_margins: need K >= 2");
  if (!(config.dropout_p >= 0.0 && config.dropout_p < 1.0)) {
    throw Error(Errc::InvalidArgument, "sample_margins: dropout probability must lie in [0, 1)");
  }
  if (candidates.empty()) throw Error(Errc::InvalidArgument, "sample_margins: no candidates");
  check_candidates(features, triplets, candidates);

  MarginSampleMatrix msm;
  msm.candidate_ids.assign(candidates.begin(), candidates.end());
  msm.samples.resize(static_cast<Eigen::Index>(candidates.size()),
                     static_cast<Eigen::Index>(config.passes));
  const std::vector<ObjectId> objects = touched_objects(features, triplets, candidates);
  for (std::size_t pass = 0; pass < config.passes; ++pass) {
    const DropoutPlan plan =
        DropoutPlan::sample(params, config.dropout_p, mix_seed(config.seed, pass));
    const Matrix e = embed_needed(params, features, objects, &plan);
    for (std::size_t r = 0; r < candidates.size(); ++r) {
      msm.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(pass)) =
          margin_from_embeddings(e, triplets[candidates[r]]);
    }
  }
  return msm;
}

CenteredMargins center(const MarginSampleMatrix& msm) {
  const Eigen::Index k = msm.samples.cols();
  if (k < 2) throw Error(Errc::InvalidArgument, "center: need K >= 2");
  CenteredMargins cm;
  cm.candidate_ids = msm.candidate_ids;
  // Mean taken as first sample plus mean offset, so constant rows center to
  // exact zeros.
  cm.means.resize(msm.samples.rows());
  for (Eigen::Index t = 0; t < msm.samples.rows(); ++t) {
    const double anchor = msm.samples(t, 0);
    double offset = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) offset += msm.samples(t, c) - anchor;
    cm.means(t) = anchor + offset / static_cast<double>(k);
  }
  cm.centered = msm.samples.colwise() - cm.means;
  cm.variances.resize(cm.centered.rows());
  for (Eigen::Index t = 0; t < cm.centered.rows(); ++t) {
    const Vector u = cm.centered.row(t).transpose();
    cm.variances(t) = sequential_dot(u.data(), u.data(), static_cast<std::size_t>(k)) /
                      static_cast<double>(k - 1);
  }
  return cm;
}

Vector deterministic_margins(const EmbeddingParams& params, const Matrix& features,
                             std::span<const Triplet> triplets,
                             std::span<const TripletId> candidates) {
  check_candidates(features, triplets, candidates);
  const std::vector<ObjectId> objects = touched_objects(features, triplets, candidates);
  const Matrix e = embed_needed(params, features, objects, nullptr);
  Vector out(static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    out(static_cast<Eigen::Index>(r)) = margin_from_embeddings(e, triplets[candidates[r]]);
  }
  return out;
}

}  // namespace batchal
