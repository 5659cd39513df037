#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "batchal/linalg.hpp"
#include "batchal/model.hpp"

namespace batchal {

using TripletId = std::size_t;

// Row t holds the margin of candidate t under each of the K dropout passes.
struct MarginSampleMatrix {
  std::vector<TripletId> candidate_ids;
  Matrix samples;  // m x K

  std::size_t passes() const noexcept { return static_cast<std::size_t>(samples.cols()); }
  std::size_t size() const noexcept { return candidate_ids.size(); }
};

// Row means and zero-mean rows u_t. variances[t] = |u_t|^2 / (K - 1).
struct CenteredMargins {
  std::vector<TripletId> candidate_ids;
  Vector means;
  Matrix centered;  // m x K
  Vector variances;

  std::size_t size() const noexcept { return candidate_ids.size(); }
  std::size_t passes() const noexcept { return static_cast<std::size_t>(centered.cols()); }

  // Covariance <u_s, u_t> / (K - 1) between two rows.
  double covariance(std::size_t s, std::size_t t) const;
  // Covariance matrix of the rows at the given positions.
  Matrix covariance_of(std::span<const std::size_t> positions) const;
  // Copy restricted to the given positions, in that order.
  CenteredMargins subset(std::span<const std::size_t> positions) const;
};

struct SamplingConfig {
  std::size_t passes = 70;
  double dropout_p = 0.02;
  std::uint64_t seed = 0;
};

/// MC-dropout margin samples. Pass k uses a single DropoutPlan seeded by
/// mix_seed(seed, k) for every candidate, so inter-triplet correlation comes
/// only from the shared model perturbation. Each object is embedded once per
/// pass. `triplets[id]` is the triplet of candidate `id`.
MarginSampleMatrix sample_margins(const EmbeddingParams& params, const Matrix& features,
                                  std::span<const Triplet> triplets,
                                  std::span<const TripletId> candidates,
                                  const SamplingConfig& config);

CenteredMargins center(const MarginSampleMatrix& msm);

/// Deterministic (no-dropout) margins of the candidates.
Vector deterministic_margins(const EmbeddingParams& params, const Matrix& features,
                             std::span<const Triplet> triplets,
                             std::span<const TripletId> candidates);

}  // namespace batchal
