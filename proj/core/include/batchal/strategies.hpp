#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "batchal/linalg.hpp"
#include "batchal/posterior.hpp"

namespace batchal {

enum class Strategy { JointEntropy, Random, Uncertainty, Variance };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s) noexcept;

struct SelectionConfig {
  std::size_t batch_size = 1;
  // Score regularizer; unset means 1e-8 x mean candidate variance.
  std::optional<double> jitter;
  // Residual norm below which the chosen span counts as saturated.
  double min_norm = 1e-8;
  std::uint64_t seed = 0;
};

struct SelectionResult {
  std::vector<TripletId> chosen;
  std::vector<double> step_scores;
  Strategy strategy = Strategy::Random;
  // 1-based step at which the greedy span saturated, if it did.
  std::optional<std::size_t> saturated_at;
  std::size_t inner_products = 0;
};

double default_jitter(const CenteredMargins& cm);

/// Greedy joint-entropy batch. Each step picks the candidate whose scaled
/// row u_t / sqrt(K-1) has the largest residual against the span of the rows
/// already chosen; that residual's squared norm is the determinant ratio
/// det(S_{B+t}) / det(S_B). Residuals are updated incrementally against each
/// newly added basis direction, so the whole pass costs O(K b m).
///
/// Ties go to the lowest triplet id. Once the best residual norm drops below
/// min_norm the remaining picks are by variance, then id.
SelectionResult select_joint_entropy(const CenteredMargins& cm, const SelectionConfig& cfg);

SelectionResult select_random(std::span<const TripletId> candidates, const SelectionConfig& cfg);

// Binary ordering entropy with p = sigmoid(margin).
double ordering_entropy(double margin);

SelectionResult select_uncertainty(std::span<const TripletId> candidates,
                                   const Vector& margins, const SelectionConfig& cfg);

SelectionResult select_variance(const CenteredMargins& cm, const SelectionConfig& cfg);

/// Gaussian entropy 0.5 * (b log(2 pi e) + log det(S_B + jitter I)).
double batch_entropy(const CenteredMargins& batch, double jitter);

}  // namespace batchal
