#include <algorithm>
#include <cmath>
#include <limits>

#include "evidseg/kernels.hpp"

namespace evidseg::kernels {

LabImage to_lab(const Image& image) {
  LabImage lab{image.height(), image.width(), std::vector<LabColor>(image.size())};
  const auto src = image.pixels();
  const auto n = static_cast<std::ptrdiff_t>(src.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) lab.pixels[i] = rgb_to_lab(src[i]);
  return lab;
}

double slic_distance(const LabColor& p, double x, double y, const ClusterCenter& c,
                     double spatial_weight) {
  const double dl = p.l - c.l;
  const double da = p.a - c.a;
  const double db = p.b - c.b;
  const double dx = x - c.x;
  const double dy = y - c.y;
  return std::sqrt(dl * dl + da * da + db * db) + spatial_weight * std::sqrt(dx * dx + dy * dy);
}

void slic_assign_serial(const LabImage& lab, std::span<const ClusterCenter> centers,
                        double radius, double spatial_weight, std::span<int> labels) {
  const int h = lab.height;
  const int w = lab.width;
  std::vector<double> dist(labels.size(), std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const ClusterCenter& c = centers[k];
    // One pixel of slack on each side; in_window decides membership.
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y - radius)) - 1);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y + radius)) + 1);
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x - radius)) - 1);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x + radius)) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!in_window(x, y, c, radius)) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double d = slic_distance(lab.pixels[i], x, y, c, spatial_weight);
        if (d < dist[i]) {
          dist[i] = d;
          labels[i] = static_cast<int>(k);
        }
      }
    }
  }
}

void slic_assign_parallel(const LabImage& lab, std::span<const ClusterCenter> centers,
                          double radius, double spatial_weight, std::span<int> labels) {
  const int h = lab.height;
  const int w = lab.width;
  // Bucket centers on a grid of cell size `radius`; a pixel's candidates lie
  // within one cell of its own (two for rounding slack).
  const double cell = std::max(radius, 1.0);
  const int bw = static_cast<int>(w / cell) + 1;
  const int bh = static_cast<int>(h / cell) + 1;
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(bw) * bh);
  auto bucket_of = [&](double v, int limit) {
    return std::clamp(static_cast<int>(std::floor(v / cell)), 0, limit - 1);
  };
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const int bx = bucket_of(centers[k].x, bw);
    const int by = bucket_of(centers[k].y, bh);
    buckets[static_cast<std::size_t>(by) * bw + bx].push_back(static_cast<int>(k));
  }

#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const int by = bucket_of(y, bh);
    for (int x = 0; x < w; ++x) {
      const int bx = bucket_of(x, bw);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double best = std::numeric_limits<double>::infinity();
      int best_k = -1;
      for (int cy = std::max(0, by - 2); cy <= std::min(bh - 1, by + 2); ++cy) {
        for (int cx = std::max(0, bx - 2); cx <= std::min(bw - 1, bx + 2); ++cx) {
          for (int k : buckets[static_cast<std::size_t>(cy) * bw + cx]) {
            const ClusterCenter& c = centers[k];
            if (!in_window(x, y, c, radius)) continue;
            const double d = slic_distance(lab.pixels[i], x, y, c, spatial_weight);
            if (d < best || (d == best && k < best_k)) {
              best = d;
              best_k = k;
            }
          }
        }
      }
      if (best_k >= 0) labels[i] = best_k;
    }
  }
}

void slic_update_centers(const LabImage& lab, std::span<const int> labels,
                         std::span<ClusterCenter> centers) {
  constexpr int kBlockRows = 16;
  const int h = lab.height;
  const int w = lab.width;
  const int k = static_cast<int>(centers.size());
  const int blocks = (h + kBlockRows - 1) / kBlockRows;
  // Per block: k * (l, a, b, x, y, count).
  std::vector<double> partial(static_cast<std::size_t>(blocks) * k * 6, 0.0);

#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    double* acc = partial.data() + static_cast<std::size_t>(blk) * k * 6;
    const int y1 = std::min(h, (blk + 1) * kBlockRows);
    for (int y = blk * kBlockRows; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const int id = labels[i];
        if (id < 0 || id >= k) continue;
        double* a = acc + static_cast<std::size_t>(id) * 6;
        a[0] += lab.pixels[i].l;
        a[1] += lab.pixels[i].a;
        a[2] += lab.pixels[i].b;
        a[3] += x;
        a[4] += y;
        a[5] += 1.0;
      }
    }
  }

  std::vector<double> total(static_cast<std::size_t>(k) * 6, 0.0);
  for (int blk = 0; blk < blocks; ++blk) {
    const double* acc = partial.data() + static_cast<std::size_t>(blk) * k * 6;
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += acc[j];
  }
  for (int id = 0; id < k; ++id) {
    const double* t = total.data() + static_cast<std::size_t>(id) * 6;
    if (t[5] == 0.0) continue;
    centers[id] = {t[0] / t[5], t[1] / t[5], t[2] / t[5], t[3] / t[5], t[4] / t[5]};
  }
}

}  // namespace evidseg::kernels
