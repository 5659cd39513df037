#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "batchal/linalg.hpp"

namespace batchal {

using ObjectId = std::size_t;

// Ordered triplet: object i is closer to j than to k.
struct Triplet {
  ObjectId i = 0;
  ObjectId j = 0;
  ObjectId k = 0;

  Triplet swapped() const { return {i, k, j}; }
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class Activation { Relu, Tanh };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a) noexcept;

/// Weights and biases of the embedding MLP. weights[l] maps layer l to
/// layer l+1, so it is layer_sizes[l+1] x layer_sizes[l]. Hidden layers use
/// `activation`; the output layer is linear.
inline constexpr double kOutputInitGain = 0.1;

struct EmbeddingParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::Relu;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t parameter_count() const;

  // He-uniform weights with the output layer shrunk by kOutputInitGain; zero biases.
  static EmbeddingParams initialize(std::vector<std::size_t> layer_sizes,
                                    Activation activation, std::uint64_t seed);
  // Same shapes, all zeros.
  EmbeddingParams zeros_like() const;

  // Flat views for optimizers and finite-difference checks.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  friend bool operator==(const EmbeddingParams&, const EmbeddingParams&) = default;
};

/// One stochastic dropout pass: a keep mask for every hidden layer output.
/// Kept units are scaled by 1/(1-p) so the expected activation matches the
/// deterministic pass.
struct DropoutPlan {
  double p = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::uint8_t>> keep;

  double scale() const noexcept { return 1.0 / (1.0 - p); }

  static DropoutPlan sample(const EmbeddingParams& params, double p, std::uint64_t seed);
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const EmbeddingParams& params, double learning_rate);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

Vector forward(const EmbeddingParams& params, const Eigen::Ref<const Vector>& x,
               const DropoutPlan* plan = nullptr);

/// Embeds every row of `features`; row i of the result is phi(x_i).
Matrix embed_all(const EmbeddingParams& params, const Matrix& features,
                 const DropoutPlan* plan = nullptr);

/// |phi(x_i) - phi(x_k)|^2 - |phi(x_i) - phi(x_j)|^2.
double triplet_margin(const EmbeddingParams& params, const Triplet& t,
                      const Matrix& features, const DropoutPlan* plan = nullptr);

// Margin from precomputed embeddings (rows of `embedded`).
double margin_from_embeddings(const Matrix& embedded, const Triplet& t);

struct LossAndGrad {
  double loss = 0.0;
  EmbeddingParams grad;
};

/// Exponential triplet loss sum_t exp(-margin_t) and its exact gradient.
LossAndGrad batch_loss_and_grad(const EmbeddingParams& params,
                                std::span<const Triplet> triplets,
                                const Matrix& features,
                                const DropoutPlan* plan = nullptr);

double batch_loss(const EmbeddingParams& params, std::span<const Triplet> triplets,
                  const Matrix& features, const DropoutPlan* plan = nullptr);

void adam_step(EmbeddingParams& params, const EmbeddingParams& grad, AdamState& state);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t sgd_batch = 500;
  double learning_rate = 1e-4;
  // Dropout applied during training; one plan per minibatch step.
  double dropout_p = 0.02;
  std::uint64_t seed = 0;
};

struct TrainResult {
  EmbeddingParams params;
  AdamState state;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Minibatch Adam over shuffled epochs, starting from `params` and `state`
/// (warm start). Losses are full-set deterministic losses.
TrainResult train(EmbeddingParams params, AdamState state,
                  std::span<const Triplet> labeled, const Matrix& features,
                  const TrainConfig& config);

/// Fraction of triplets with strictly positive deterministic margin.
double evaluate(const EmbeddingParams& params, std::span<const Triplet> test,
                const Matrix& features);

/// Gallery ids ordered by squared embedding distance to the query (ties by
/// id), truncated to top_k.
std::vector<ObjectId> retrieve(const EmbeddingParams& params, ObjectId query,
                               std::span<const ObjectId> gallery,
                               const Matrix& features, std::size_t top_k);

}  // namespace batchal
