#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "batchal/data.hpp"
#include "batchal/loop.hpp"

namespace batchal {

// Where a dataset comes from: a directory holding features.csv plus
// dissim.csv or triplets.jsonl, explicit file paths, or a synthetic spec.
struct DatasetSource {
  std::string name;
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path features;
  std::filesystem::path dissim;
  std::filesystem::path triplets;
  std::filesystem::path manifest;  // optional display payloads
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::size_t triplet_count = 6000;
  std::uint64_t triplet_seed = 0;
  ExperimentSpec spec;
  std::filesystem::path output_dir;
  std::vector<std::string> warnings;
};

/// Parses an experiment config document. Unknown keys, wrong types and
/// out-of-range values raise ConfigError naming the key and its line.
/// Relative paths resolve against base_dir.
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Dataset directory layout shared by the CLI and the service.
DatasetSource dataset_dir_source(const std::filesystem::path& dir);

std::shared_ptr<const Dataset> load_dataset(const DatasetSource& source,
                                            std::size_t triplet_count, std::uint64_t seed);

struct SessionRequest {
  std::string dataset;
  std::size_t triplet_count = 6000;
  std::uint64_t triplet_seed = 0;
  SessionConfig session;
  RoundConfig round;
};

/// Body of a session-creation request: a subset of the experiment keys with
/// a dataset name, a single "strategy" and a single "seed".
SessionRequest parse_session_request(const nlohmann::json& body);

nlohmann::json to_json(const SessionRequest& request);

}  // namespace batchal
