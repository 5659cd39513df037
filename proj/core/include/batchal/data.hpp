#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "batchal/linalg.hpp"
#include "batchal/model.hpp"

namespace batchal {

// n x d feature rows; row index is the object id.
struct FeatureTable {
  Matrix rows;

  std::size_t n() const noexcept { return static_cast<std::size_t>(rows.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(rows.cols()); }
};

struct TripletList {
  std::vector<Triplet> triplets;
};

struct DissimMatrix {
  Matrix values;  // n x n, symmetric, zero diagonal

  std::size_t n() const noexcept { return static_cast<std::size_t>(values.rows()); }
};

using GroundTruth = std::variant<TripletList, DissimMatrix>;

enum class Nonlinearity { Tanh, Identity };

struct SyntheticSpec {
  std::size_t n = 150;
  std::size_t d = 10;
  std::size_t latent_dim = 3;
  Nonlinearity nonlinearity = Nonlinearity::Tanh;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

Nonlinearity parse_nonlinearity(const std::string& name);

FeatureTable load_features(const std::filesystem::path& path);
void save_features(const FeatureTable& table, const std::filesystem::path& path);

DissimMatrix load_dissim(const std::filesystem::path& path);
void save_dissim(const DissimMatrix& m, const std::filesystem::path& path);
void validate_dissim(const DissimMatrix& m);

// One {"i":..,"j":..,"k":..} object per line; j is the closer object.
std::vector<Triplet> load_triplets(const std::filesystem::path& path);
void save_triplets(std::span<const Triplet> triplets, const std::filesystem::path& path);

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// Uniform rejection sampling of distinct triplets ordered so that
/// d(i,j) < d(i,k). Near-ties (|d(i,j) - d(i,k)| < min_gap) are discarded and
/// each unordered {i, {j,k}} appears at most once.
std::vector<Triplet> triplets_from_matrix(const DissimMatrix& gt, std::size_t count,
                                          std::uint64_t seed, double min_gap);

// 1e-6 x median off-diagonal entry.
double default_min_gap(const DissimMatrix& gt);

struct SyntheticDataset {
  FeatureTable features;
  DissimMatrix dissim;
};

/// Latent z ~ N(0, I_L); features x = A tanh(W z) + noise with A a random
/// orthogonal d x d matrix and W a random d x L matrix with orthogonal columns
/// of norm sqrt(d / L). Ground truth is Euclidean distance between latent
/// points. The identity nonlinearity uses
/// A = W = I and x = z (requires L == d).
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

struct TripletSplit {
  std::vector<Triplet> train;
  std::vector<Triplet> test;
};

// Uniformly random disjoint partition of 0..count-1; train gets
// round(train_fraction * count) indices. Both halves come back sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double train_fraction, std::uint64_t seed);

TripletSplit split_triplets(std::span<const Triplet> triplets, double train_fraction,
                            std::uint64_t seed);

}  // namespace batchal
