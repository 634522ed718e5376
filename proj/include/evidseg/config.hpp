#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evidseg/cnn.hpp"
#include "evidseg/ensemble.hpp"
#include "evidseg/metrics.hpp"
#include "evidseg/region_graph.hpp"
#include "evidseg/slic.hpp"

namespace evidseg {

/// One context level: which neighborhood, the patch side and the network.
struct LevelConfig {
  std::string name;  // "0N", "1N", "2N"
  int neighbors = 0;
  int side = 24;
  std::string arch;
  cnn::TrainConfig train;
};

enum class EvidenceSource { Train, Validation };

/// Everything a pipeline run depends on. Loaded from a flat key=value file;
/// see README.md for the key list.
struct RunConfig {
  std::filesystem::path dataset;    // list of "image label" lines
  std::filesystem::path workspace;
  std::uint64_t seed = 0;
  std::optional<std::array<int, 3>> split_sizes;

  SlicParams slic;
  Connectivity adjacency = Connectivity::Four;
  std::vector<LevelConfig> levels;

  ensemble::DecisionRule decision_rule = ensemble::DecisionRule::Pignistic;
  EvidenceSource confusion_source = EvidenceSource::Train;
  EvidenceSource weights_source = EvidenceSource::Train;
  std::optional<ensemble::SourceWeights> weights_override;

  /// Paper settings: MOR 400, patch sides 24/32/48 with the matching
  /// architectures, levels 0N/1N/2N.
  static RunConfig defaults();

  /// Parses key=value lines on top of defaults(). Relative paths are taken
  /// relative to the file's directory.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir);

  /// Sets the base seed; training seeds derive from it per level.
  void set_seed(std::uint64_t s);

  std::string slic_fingerprint() const;
  std::string level_fingerprint(std::size_t level) const;
};

}  // namespace evidseg
