#pragma once

// Data-parallel inner loops. Each parallel kernel has a serial reference
// twin; tests require the two to agree bit-for-bit (SLIC) or to 1e-12 (conv).

#include <span>
#include <vector>

#include "evidseg/slic.hpp"

namespace evidseg::kernels {

struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<LabColor> pixels;
};

LabImage to_lab(const Image& image);

/// Distance used by both assignment kernels.
double slic_distance(const LabColor& p, double x, double y, const ClusterCenter& c,
                     double spatial_weight);

/// A pixel is a candidate for a center iff it lies within `radius` of it
/// along both axes.
inline bool in_window(double px, double py, const ClusterCenter& c, double radius) {
  double dx = px - c.x;
  double dy = py - c.y;
  return dx <= radius && -dx <= radius && dy <= radius && -dy <= radius;
}

// Assignment step. Each pixel takes the nearest center whose window covers
// it, ties to the lower center index; pixels no window covers keep their
// previous label.
void slic_assign_serial(const LabImage& lab, std::span<const ClusterCenter> centers,
                        double radius, double spatial_weight, std::span<int> labels);
void slic_assign_parallel(const LabImage& lab, std::span<const ClusterCenter> centers,
                          double radius, double spatial_weight, std::span<int> labels);

/// Update step: each center becomes the mean (l,a,b,x,y) of its pixels.
/// Accumulates in fixed row blocks so the result is independent of thread
/// count. Centers with no pixels are left unchanged.
void slic_update_centers(const LabImage& lab, std::span<const int> labels,
                         std::span<ClusterCenter> centers);

struct ConvShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int filters = 0;
  int kernel = 0;
  int out_height() const { return height - kernel + 1; }
  int out_width() const { return width - kernel + 1; }
};

/// Unfolds one CHW sample into a (channels*k*k) x (oh*ow) row-major matrix.
void im2col(const ConvShape& shape, std::span<const double> input, std::span<double> cols);
/// Adjoint of im2col: scatters `cols` back and adds into `input_grad`.
void col2im_add(const ConvShape& shape, std::span<const double> cols,
                std::span<double> input_grad);

// Valid (unpadded) cross-correlation of one CHW sample.
// weights: filters x channels x kernel x kernel; output: filters x oh x ow.
void conv2d_forward_reference(const ConvShape& shape, std::span<const double> input,
                              std::span<const double> weights, std::span<const double> bias,
                              std::span<double> output);
void conv2d_forward(const ConvShape& shape, std::span<const double> input,
                    std::span<const double> weights, std::span<const double> bias,
                    std::span<double> output);

}  // namespace evidseg::kernels
