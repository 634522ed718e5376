#pragma once

#include <span>
#include <vector>

#include "evidseg/pixelgrid.hpp"

namespace evidseg {

struct SlicParams {
  double mor = 400.0;           // minimum object resolution, pixels per superpixel
  double compactness = 10.0;    // spatial weight m
  int iterations = 10;
  double min_region_fraction = 0.25;  // fragments below this * mor are merged

  void validate() const;
};

/// Per-pixel superpixel ids in [0, k). Every id owns at least one pixel.
class SuperpixelMap {
 public:
  SuperpixelMap(int height, int width, std::vector<int> assignment);

  int height() const { return height_; }
  int width() const { return width_; }
  int k() const { return k_; }
  int at(int row, int col) const {
    return assignment_[static_cast<std::size_t>(row) * width_ + col];
  }
  std::span<const int> assignment() const { return assignment_; }

  /// Pixel count of each superpixel.
  std::vector<int> areas() const;

  LabelMap to_grid() const;
  static SuperpixelMap from_grid(const LabelMap& grid);

  friend bool operator==(const SuperpixelMap&, const SuperpixelMap&) = default;

 private:
  int height_;
  int width_;
  std::vector<int> assignment_;
  int k_;
};

struct LabColor {
  double l = 0.0;
  double a = 0.0;
  double b = 0.0;
};

struct ClusterCenter {
  double l = 0.0;
  double a = 0.0;
  double b = 0.0;
  double x = 0.0;
  double y = 0.0;
};

/// Superpixel count for an image: round-half-up of area / mor, at least 1.
int compute_nos(int height, int width, double mor);
inline int compute_nos(const Image& image, double mor) {
  return compute_nos(image.height(), image.width(), mor);
}

/// sRGB (D65) to CIELAB.
LabColor rgb_to_lab(Rgb rgb);

struct SlicTrace {
  int iterations_run = 0;
  int seeds = 0;          // centers placed on the initial grid
  int raw_clusters = 0;   // non-empty clusters before connectivity enforcement
};

enum class SlicBackend { Parallel, Serial };

/// k-means iterations only; the result may contain disconnected fragments
/// and ids are not necessarily dense.
std::vector<int> slic_cluster(const Image& image, const SlicParams& params,
                              SlicBackend backend = SlicBackend::Parallel,
                              SlicTrace* trace = nullptr);

/// Full SLIC: clustering followed by connectivity enforcement.
SuperpixelMap slic_segment(const Image& image, const SlicParams& params,
                           SlicBackend backend = SlicBackend::Parallel,
                           SlicTrace* trace = nullptr);

/// Relabels 4-connected components, merges fragments smaller than
/// min_region_fraction * mor into their largest 4-adjacent neighbor (ties to
/// the lowest id) and numbers the result densely in raster order.
SuperpixelMap enforce_connectivity(int height, int width,
                                   std::span<const int> raw,
                                   const SlicParams& params);
inline SuperpixelMap enforce_connectivity(const SuperpixelMap& raw,
                                          const SlicParams& params) {
  return enforce_connectivity(raw.height(), raw.width(), raw.assignment(), params);
}

}  // namespace evidseg
