#include "evidseg/slic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "evidseg/kernels.hpp"

namespace evidseg {

void SlicParams::validate() const {
  if (!(mor >= 1.0)) throw std::invalid_argument("mor must be >= 1");
  if (!(compactness >= 0.0)) throw std::invalid_argument("compactness must be >= 0");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(min_region_fraction > 0.0 && min_region_fraction <= 1.0))
    throw std::invalid_argument("min_region_fraction must lie in (0, 1]");
}

SuperpixelMap::SuperpixelMap(int height, int width, std::vector<int> assignment)
    : height_(height), width_(width), assignment_(std::move(assignment)), k_(0) {
  if (height < 1 || width < 1) throw std::invalid_argument("superpixel map dimensions must be positive");
  if (assignment_.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("superpixel assignment length does not match height * width");
  int max_id = -1;
  for (int id : assignment_) {
    if (id < 0) throw std::invalid_argument("negative superpixel id");
    max_id = std::max(max_id, id);
  }
  k_ = max_id + 1;
  std::vector<char> seen(k_, 0);
  for (int id : assignment_) seen[id] = 1;
  for (int id = 0; id < k_; ++id)
    if (!seen[id]) throw std::invalid_argument("superpixel id " + std::to_string(id) + " owns no pixels");
}

std::vector<int> SuperpixelMap::areas() const {
  std::vector<int> area(k_, 0);
  for (int id : assignment_) ++area[id];
  return area;
}

LabelMap SuperpixelMap::to_grid() const { return LabelMap(height_, width_, assignment_); }

SuperpixelMap SuperpixelMap::from_grid(const LabelMap& grid) {
  return SuperpixelMap(grid.height(), grid.width(),
                       std::vector<int>(grid.labels().begin(), grid.labels().end()));
}

int compute_nos(int height, int width, double mor) {
  if (!(mor >= 1.0)) throw std::invalid_argument("mor must be >= 1");
  const double exact = static_cast<double>(height) * static_cast<double>(width) / mor;
  return std::max(1, static_cast<int>(std::floor(exact + 0.5)));
}

namespace {

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double kEps = 216.0 / 24389.0;
  constexpr double kKappa = 24389.0 / 27.0;
  return t > kEps ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

}  // namespace

LabColor rgb_to_lab(Rgb rgb) {
  const double r = srgb_to_linear(rgb.r / 255.0);
  const double g = srgb_to_linear(rgb.g / 255.0);
  const double b = srgb_to_linear(rgb.b / 255.0);
  // D65 white, sRGB primaries.
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.00000;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x);
  const double fy = lab_f(y);
  const double fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

namespace {

// Picks a nx * ny seeding lattice whose count is close to `target` and whose
// cells are close to square.
std::pair<int, int> choose_lattice(int height, int width, int target) {
  double best_cost = std::numeric_limits<double>::infinity();
  std::pair<int, int> best{1, 1};
  for (int ny = 1; ny <= std::min(height, target); ++ny) {
    const int base = target / ny;
    for (int nx : {base, base + 1}) {
      if (nx < 1 || nx > width) continue;
      const double count_err = std::abs(static_cast<double>(nx) * ny / target - 1.0);
      const double aspect = std::abs(std::log((static_cast<double>(width) / nx) /
                                              (static_cast<double>(height) / ny)));
      const double cost = count_err + 0.2 * aspect;
      if (cost < best_cost) {
        best_cost = cost;
        best = {nx, ny};
      }
    }
  }
  return best;
}

double gradient_at(const kernels::LabImage& lab, int x, int y) {
  auto px = [&](int xx, int yy) -> const LabColor& {
    xx = std::clamp(xx, 0, lab.width - 1);
    yy = std::clamp(yy, 0, lab.height - 1);
    return lab.pixels[static_cast<std::size_t>(yy) * lab.width + xx];
  };
  auto sq = [](const LabColor& p, const LabColor& q) {
    const double dl = p.l - q.l, da = p.a - q.a, db = p.b - q.b;
    return dl * dl + da * da + db * db;
  };
  return sq(px(x + 1, y), px(x - 1, y)) + sq(px(x, y + 1), px(x, y - 1));
}

std::vector<ClusterCenter> seed_centers(const kernels::LabImage& lab, int target) {
  const auto [nx, ny] = choose_lattice(lab.height, lab.width, target);
  std::vector<ClusterCenter> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  const double step_x = static_cast<double>(lab.width) / nx;
  const double step_y = static_cast<double>(lab.height) / ny;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      double sx = (i + 0.5) * step_x - 0.5;
      double sy = (j + 0.5) * step_y - 0.5;
      const int px = std::clamp(static_cast<int>(std::lround(sx)), 0, lab.width - 1);
      const int py = std::clamp(static_cast<int>(std::lround(sy)), 0, lab.height - 1);
      // Move off edges: lowest gradient in the 3x3 window, if strictly lower.
      double best = gradient_at(lab, px, py);
      int bx = px, by = py;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = px + dx, qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= lab.width || qy >= lab.height) continue;
          const double g = gradient_at(lab, qx, qy);
          if (g < best) {
            best = g;
            bx = qx;
            by = qy;
          }
        }
      }
      if (bx != px || by != py) {
        sx = bx;
        sy = by;
      }
      const LabColor& c = lab.pixels[static_cast<std::size_t>(by) * lab.width + bx];
      centers.push_back({c.l, c.a, c.b, sx, sy});
    }
  }
  return centers;
}

}  // namespace

std::vector<int> slic_cluster(const Image& image, const SlicParams& params,
                              SlicBackend backend, SlicTrace* trace) {
  params.validate();
  const kernels::LabImage lab = kernels::to_lab(image);
  const int target = compute_nos(image, params.mor);
  std::vector<ClusterCenter> centers = seed_centers(lab, target);

  const double step = std::sqrt(static_cast<double>(image.size()) / target);
  const double spatial_weight = params.compactness / step;

  // Initial labels: the lattice cell each pixel falls in.
  const auto [nx, ny] = choose_lattice(image.height(), image.width(), target);
  std::vector<int> labels(image.size());
  for (int y = 0; y < image.height(); ++y) {
    const int cy = std::min(ny - 1, y * ny / image.height());
    for (int x = 0; x < image.width(); ++x) {
      const int cx = std::min(nx - 1, x * nx / image.width());
      labels[static_cast<std::size_t>(y) * image.width() + x] = cy * nx + cx;
    }
  }

  int iterations = 0;
  for (; iterations < params.iterations; ++iterations) {
    if (backend == SlicBackend::Serial)
      kernels::slic_assign_serial(lab, centers, step, spatial_weight, labels);
    else
      kernels::slic_assign_parallel(lab, centers, step, spatial_weight, labels);
    kernels::slic_update_centers(lab, labels, centers);
  }

  if (trace) {
    trace->iterations_run = iterations;
    trace->seeds = static_cast<int>(centers.size());
    std::set<int> used(labels.begin(), labels.end());
    trace->raw_clusters = static_cast<int>(used.size());
  }
  return labels;
}

SuperpixelMap slic_segment(const Image& image, const SlicParams& params,
                           SlicBackend backend, SlicTrace* trace) {
  std::vector<int> raw = slic_cluster(image, params, backend, trace);
  return enforce_connectivity(image.height(), image.width(), raw, params);
}

SuperpixelMap enforce_connectivity(int height, int width, std::span<const int> raw,
                                   const SlicParams& params) {
  params.validate();
  if (raw.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("raw assignment length does not match height * width");

  // 4-connected components in raster order.
  std::vector<int> comp(raw.size(), -1);
  std::vector<int> comp_size;
  std::vector<int> stack;
  for (std::size_t start = 0; start < raw.size(); ++start) {
    if (comp[start] >= 0) continue;
    const int id = static_cast<int>(comp_size.size());
    int size = 0;
    comp[start] = id;
    stack.push_back(static_cast<int>(start));
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++size;
      const int y = p / width, x = p % width;
      const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= height || n[1] >= width) continue;
        const int q = n[0] * width + n[1];
        if (comp[q] < 0 && raw[q] == raw[p]) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
    comp_size.push_back(size);
  }

  const int ncomp = static_cast<int>(comp_size.size());
  std::vector<std::set<int>> adj(ncomp);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int a = comp[static_cast<std::size_t>(y) * width + x];
      if (x + 1 < width) {
        const int b = comp[static_cast<std::size_t>(y) * width + x + 1];
        if (a != b) adj[a].insert(b), adj[b].insert(a);
      }
      if (y + 1 < height) {
        const int b = comp[static_cast<std::size_t>(y + 1) * width + x];
        if (a != b) adj[a].insert(b), adj[b].insert(a);
      }
    }
  }

  // Merge the smallest undersized group into its largest neighbor until no
  // undersized group with a neighbor remains.
  const double threshold = params.min_region_fraction * params.mor;
  std::set<std::pair<int, int>> small;  // (size, id)
  for (int c = 0; c < ncomp; ++c)
    if (comp_size[c] < threshold && !adj[c].empty()) small.insert({comp_size[c], c});
  std::vector<int> redirect(ncomp);
  for (int c = 0; c < ncomp; ++c) redirect[c] = c;

  while (!small.empty()) {
    const auto [size, s] = *small.begin();
    small.erase(small.begin());
    int target = -1;
    for (int n : adj[s]) {
      if (target < 0 || comp_size[n] > comp_size[target] ||
          (comp_size[n] == comp_size[target] && n < target))
        target = n;
    }
    if (target < 0) continue;
    small.erase({comp_size[target], target});
    comp_size[target] += size;
    comp_size[s] = 0;
    redirect[s] = target;
    for (int n : adj[s]) {
      adj[n].erase(s);
      if (n != target) {
        adj[n].insert(target);
        adj[target].insert(n);
      }
    }
    adj[s].clear();
    adj[target].erase(target);
    if (comp_size[target] < threshold && !adj[target].empty())
      small.insert({comp_size[target], target});
  }

  auto resolve = [&](int c) {
    while (redirect[c] != c) c = redirect[c];
    return c;
  };

  std::vector<int> dense(ncomp, -1);
  int next = 0;
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const int g = resolve(comp[i]);
    if (dense[g] < 0) dense[g] = next++;
    out[i] = dense[g];
  }
  return SuperpixelMap(height, width, std::move(out));
}

}  // namespace evidseg
