#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evidseg/pixelgrid.hpp"
#include "evidseg/slic.hpp"

namespace evidseg {

enum class Connectivity { Four, Eight };

/// Superpixel neighbor graph; adjacency lists are sorted, symmetric and free
/// of self loops.
class RegionAdjacencyGraph {
 public:
  explicit RegionAdjacencyGraph(std::vector<std::vector<int>> adjacency);

  int k() const { return static_cast<int>(adjacency_.size()); }
  const std::vector<int>& neighbors(int id) const { return adjacency_.at(id); }

 private:
  std::vector<std::vector<int>> adjacency_;
};

/// Context depth around a superpixel: 0 is the superpixel alone, q adds all
/// superpixels within q hops. Levels 0..3 are accepted.
class NeighborLevel {
 public:
  static constexpr int kMax = 3;
  explicit NeighborLevel(int level);
  int value() const { return level_; }
  friend bool operator==(NeighborLevel, NeighborLevel) = default;

 private:
  int level_;
};

/// Inclusive pixel bounds.
struct BoundingBox {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  int height() const { return bottom - top + 1; }
  int width() const { return right - left + 1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// side x side RGB crop, row-major interleaved, values in [0, 1].
struct Patch {
  int side = 0;
  std::vector<float> data;
  int source_id = 0;
  NeighborLevel level{0};
};

RegionAdjacencyGraph build_adjacency(const SuperpixelMap& superpixels,
                                     Connectivity connectivity = Connectivity::Four);

/// All ids within `level` hops of `seed`, sorted ascending.
std::vector<int> dilate_region(const RegionAdjacencyGraph& graph, int seed, NeighborLevel level);

BoundingBox minimal_bbox(const SuperpixelMap& superpixels, std::span<const int> ids);

/// Tight box of every superpixel, indexed by id.
std::vector<BoundingBox> superpixel_boxes(const SuperpixelMap& superpixels);

/// Crops the minimal box of the dilated region, blacks out pixels outside
/// the region and bilinearly stretches the crop to side x side.
Patch extract_patch(const Image& image, const SuperpixelMap& superpixels,
                    const RegionAdjacencyGraph& graph, int seed, NeighborLevel level, int side);

/// Same as above with per-superpixel boxes precomputed; the region box is
/// the union of its members' boxes.
Patch extract_patch(const Image& image, const SuperpixelMap& superpixels,
                    const RegionAdjacencyGraph& graph, std::span<const BoundingBox> boxes,
                    int seed, NeighborLevel level, int side);

/// Masked crop before resizing, in [0,1] floats (exposed for tests).
std::vector<float> masked_crop(const Image& image, const SuperpixelMap& superpixels,
                               std::span<const int> ids, const BoundingBox& box);

/// Bilinear resize of an interleaved RGB float grid (half-pixel centers,
/// edge clamped). Identity when the sizes match.
std::vector<float> resize_bilinear(std::span<const float> src, int src_h, int src_w, int dst_h,
                                   int dst_w);

/// One row of a patch-batch sidecar.
struct PatchRecord {
  int image_id = 0;
  int superpixel_id = 0;
  int ground_truth = kVoidLabel;
  friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

/// In-memory form of a patch batch file plus its sidecar.
struct PatchBatch {
  int side = 0;
  std::vector<float> data;  // count * side * side * 3, HWC per patch
  std::vector<PatchRecord> records;

  std::size_t count() const { return records.size(); }
  std::size_t patch_size() const { return static_cast<std::size_t>(side) * side * 3; }
  std::span<const float> patch(std::size_t i) const {
    return std::span<const float>(data).subspan(i * patch_size(), patch_size());
  }
  void append(const Patch& patch, const PatchRecord& record);
};

// Binary tensor: u32 count, u32 side, u32 channels (3), then f32 pixels, all
// little-endian. Sidecar: one "image_id superpixel_id ground_truth" row per patch.
void save_patch_batch(const PatchBatch& batch, const std::filesystem::path& tensor_path,
                      const std::filesystem::path& sidecar_path);
PatchBatch load_patch_batch(const std::filesystem::path& tensor_path,
                            const std::filesystem::path& sidecar_path);

}  // namespace evidseg
