#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evidseg/config.hpp"
#include "evidseg/ensemble.hpp"

namespace evidseg {

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path label;
  Split split = Split::Train;
};

/// Dataset entries with their split assignment. Image ids are entry indices.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;

  std::vector<int> ids_in(Split split) const;

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Reads a dataset list: one "image_path label_path" pair per line,
/// relative paths resolved against the list's directory.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> read_dataset_list(
    const std::filesystem::path& path);

/// 500/72/143 for 715 entries, otherwise the same proportions with the
/// remainder going to test.
std::array<int, 3> default_split_sizes(int entries);

/// Seeded uniform shuffle, then the first sizes[0] go to train, the next
/// sizes[1] to val and the rest to test. Entry order is preserved.
DatasetManifest split_dataset(
    const std::vector<std::pair<std::filesystem::path, std::filesystem::path>>& entries,
    std::array<int, 3> sizes, std::uint64_t seed);

/// An upstream artifact that a stage needs does not exist.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& path);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// An upstream artifact differs from what the stage that produced it recorded.
class StaleArtifact : public std::runtime_error {
 public:
  explicit StaleArtifact(const std::filesystem::path& path);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

enum class Stage { Split, Segment, Extract, Train, Predict, Fuse, Evaluate, Overlay };

Stage parse_stage(std::string_view name);
std::string stage_name(Stage s);
const std::vector<Stage>& all_stages();

struct StageReport {
  int units = 0;
  int cache_hits = 0;
  std::vector<std::filesystem::path> outputs;
  bool all_cached() const { return units == cache_hits; }
};

/// Cacheable pipeline stages over a workspace:
///   manifest.txt, superpixels/, patches/<level>/, models/<level>/,
///   scores/<level>/, decisions/<mode>/, reports/, .cache/
class Pipeline {
 public:
  Pipeline(RunConfig config, std::ostream& log);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& workspace() const { return config_.workspace; }

  /// Runs one stage. `mode` restricts fuse/evaluate/overlay to one ensemble
  /// mode; without it those stages cover all three.
  StageReport run(Stage stage, std::optional<ensemble::Mode> mode = std::nullopt);

  /// Runs every stage in order.
  std::vector<StageReport> run_all(std::optional<ensemble::Mode> mode = std::nullopt);

  // Artifact locations.
  std::filesystem::path manifest_path() const;
  std::filesystem::path superpixel_path(int image_id) const;
  std::filesystem::path patch_tensor_path(std::size_t level, Split split) const;
  std::filesystem::path patch_sidecar_path(std::size_t level, Split split) const;
  std::filesystem::path model_path(std::size_t level) const;
  std::filesystem::path confusion_path(std::size_t level, Split split) const;
  std::filesystem::path accuracy_path(std::size_t level) const;
  std::filesystem::path scores_path(std::size_t level, Split split) const;
  std::filesystem::path decisions_path(ensemble::Mode mode, Split split) const;
  std::filesystem::path report_path(Split split, const std::string& suffix) const;

 private:
  struct Unit;
  bool run_unit(const Unit& unit);
  std::string recorded_hash(const std::filesystem::path& path) const;
  void require(const std::filesystem::path& path) const;

  StageReport run_split();
  StageReport run_segment();
  StageReport run_extract();
  StageReport run_train();
  StageReport run_predict();
  StageReport run_fuse(const std::vector<ensemble::Mode>& modes);
  StageReport run_evaluate(const std::vector<ensemble::Mode>& modes);
  StageReport run_overlay(const std::vector<ensemble::Mode>& modes);

  RunConfig config_;
  std::ostream& log_;
};

}  // namespace evidseg
