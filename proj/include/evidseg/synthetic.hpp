#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "evidseg/pixelgrid.hpp"

namespace evidseg {

/// Voronoi texture scenes: each cell takes one of `classes` labels and is
/// painted with that class's base colour, noise level and stripe pattern.
struct SyntheticSpec {
  int images = 40;
  int height = 96;
  int width = 128;
  int classes = 4;      // uses the first `classes` entries of synthetic_classes()
  int regions = 5;      // Voronoi cells per image
  std::uint64_t seed = 1;

  void validate() const;
};

/// Label ids of the classes the generator paints, in order.
const std::vector<int>& synthetic_classes();

/// Image `index` of the scene family described by `spec`. Deterministic in
/// (spec.seed, index).
std::pair<Image, LabelMap> synthetic_scene(const SyntheticSpec& spec, int index);

/// Writes images/NNN.png, labels/NNN.txt, dataset.txt and a desk-scale
/// config.txt under `dir`. Returns the dataset list path.
std::filesystem::path write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace evidseg
