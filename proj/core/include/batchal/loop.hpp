#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "batchal/data.hpp"
#include "batchal/model.hpp"
#include "batchal/posterior.hpp"
#include "batchal/strategies.hpp"

namespace batchal {

/// Objects, ground truth and the universe of ground-truth-ordered triplets
/// that sessions split into an annotation pool and a held-out test set.
struct Dataset {
  std::string name;
  FeatureTable features;
  GroundTruth truth;
  std::vector<Triplet> universe;
  // Optional per-object display payloads, passed through to annotators.
  std::vector<std::string> labels;
  std::vector<std::string> image_urls;
};

/// Builds the triplet universe: the list itself for TripletList ground truth,
/// otherwise `triplet_count` triplets sampled from the matrix.
Dataset make_dataset(std::string name, FeatureTable features, GroundTruth truth,
                     std::size_t triplet_count, std::uint64_t seed);

/// Simulated annotator. Orders a triplet by the ground truth, then flips the
/// order with probability flip_rate. The flip for pool id t depends only on
/// (seed, t), so answers do not depend on batch composition or order.
class Oracle {
 public:
  Oracle(std::shared_ptr<const GroundTruth> truth, double flip_rate, std::uint64_t seed);

  double flip_rate() const noexcept { return flip_rate_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Noise-free ordering. Throws TieUndefined on equal dissimilarities and
  // IndexOutOfRange when a triplet is unknown to a TripletList ground truth.
  Triplet true_order(const Triplet& t) const;

  std::vector<Triplet> annotate(std::span<const TripletId> ids,
                                std::span<const Triplet> pool) const;

 private:
  static std::uint64_t key(ObjectId i, ObjectId a, ObjectId b) noexcept;

  std::shared_ptr<const GroundTruth> truth_;
  double flip_rate_;
  std::uint64_t seed_;
  std::unordered_map<std::uint64_t, Triplet> listed_;
};

struct SessionConfig {
  std::size_t init_pool = 200;
  double train_fraction = 0.5;
  std::vector<std::size_t> hidden_layers{32, 32};
  std::size_t embedding_dim = 8;
  Activation activation = Activation::Relu;
  TrainConfig pretrain;
  TrainConfig warm_start;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct RoundConfig {
  Strategy strategy = Strategy::JointEntropy;
  std::size_t batch_size = 100;
  std::size_t passes = 70;
  double dropout_p = 0.02;
  std::optional<double> jitter;
  std::size_t candidate_cap = 5000;
};

struct RoundRecord {
  std::size_t round = 0;
  std::string strategy;
  std::vector<TripletId> chosen;
  double batch_entropy = 0.0;
  double accuracy = 0.0;
  double select_ms = 0.0;
  double train_ms = 0.0;

  // Equality on everything except wall-clock timings.
  bool same_outcome(const RoundRecord& other) const;
};

struct Proposal {
  std::size_t round = 0;
  Strategy strategy = Strategy::JointEntropy;
  std::vector<TripletId> chosen;
  std::vector<double> step_scores;
  std::optional<std::size_t> saturated_at;
  double batch_entropy = 0.0;
  double select_ms = 0.0;
};

/// One active-learning run: fixed test set, annotation pool split into
/// labeled / unlabeled ids, current model and optimizer state, and history.
/// Pool triplets are stored with a seeded random j/k orientation; their true
/// order only becomes known through annotation.
class ActiveLearningSession {
 public:
  static ActiveLearningSession init(std::shared_ptr<const Dataset> dataset,
                                    const SessionConfig& config);

  /// Scores candidates and picks the next batch without changing state.
  Proposal propose(const RoundConfig& config) const;

  /// Moves the proposal's ids to the labeled set with the given orderings
  /// (same order as proposal.chosen), warm-start retrains and evaluates.
  const RoundRecord& commit(const Proposal& proposal, std::span<const Triplet> ordered);

  /// propose, annotate with the simulated oracle, commit.
  const RoundRecord& run_round(const RoundConfig& config);

  std::size_t round() const noexcept { return round_; }
  const SessionConfig& config() const noexcept { return config_; }
  const Dataset& dataset() const noexcept { return *dataset_; }
  const Oracle& oracle() const noexcept { return oracle_; }
  const EmbeddingParams& params() const noexcept { return params_; }
  const AdamState& adam_state() const noexcept { return adam_; }
  std::span<const Triplet> pool() const noexcept { return pool_; }
  std::span<const Triplet> test_set() const noexcept { return test_; }
  std::span<const TripletId> labeled_ids() const noexcept { return labeled_ids_; }
  std::span<const Triplet> labeled() const noexcept { return labeled_; }
  const std::vector<TripletId>& unlabeled_ids() const noexcept { return unlabeled_; }
  const std::vector<RoundRecord>& history() const noexcept { return history_; }

  /// Samples used for both selection and entropy reporting in a round.
  std::uint64_t posterior_seed(std::size_t round) const noexcept;

 private:
  ActiveLearningSession() = default;

  std::vector<TripletId> draw_candidates(std::size_t cap) const;

  std::shared_ptr<const Dataset> dataset_;
  SessionConfig config_;
  Oracle oracle_{nullptr, 0.0, 0};
  EmbeddingParams params_;
  AdamState adam_;
  std::vector<Triplet> pool_;
  std::vector<Triplet> test_;
  std::vector<TripletId> labeled_ids_;
  std::vector<Triplet> labeled_;
  std::vector<TripletId> unlabeled_;  // sorted
  std::size_t round_ = 0;
  std::vector<RoundRecord> history_;
};

// Seed of the simulated oracle used by sessions created with `session_seed`.
std::uint64_t oracle_seed(std::uint64_t session_seed) noexcept;

struct ExperimentSpec {
  SessionConfig session;
  RoundConfig round;
  std::vector<Strategy> strategies;
  std::size_t rounds = 8;
  std::vector<std::uint64_t> seeds;
};

struct MetricsRow {
  std::string strategy;
  std::size_t round = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double batch_entropy = 0.0;
  double select_ms = 0.0;
  double train_ms = 0.0;
};

struct AggregateRow {
  std::string strategy;
  std::size_t round = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_batch_entropy = 0.0;
  std::size_t seeds = 0;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<AggregateRow> aggregate;
};

using ProgressFn = std::function<void(const std::string& strategy, std::uint64_t seed,
                                      const RoundRecord& record)>;

/// Every (seed, strategy) cell starts from the same per-seed pretrained
/// model and runs `rounds` rounds. Rows are sorted by (strategy order,
/// seed order, round).
ExperimentResult run_experiment(std::shared_ptr<const Dataset> dataset,
                                const ExperimentSpec& spec, const ProgressFn& progress = {});

/// Mean and sample standard deviation (0 for a single seed) per
/// (strategy, round), in first-appearance strategy order.
std::vector<AggregateRow> aggregate(std::span<const MetricsRow> rows);

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out);
void write_aggregate_csv(std::span<const AggregateRow> rows, std::ostream& out);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);
std::vector<AggregateRow> read_aggregate_csv(std::istream& in);

}  // namespace batchal
