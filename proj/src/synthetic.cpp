#include "evidseg/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "evidseg/io_util.hpp"

namespace evidseg {

namespace fs = std::filesystem;

namespace {

struct Signature {
  Rgb base;
  int noise;        // uniform amplitude per channel
  int stripe;       // 0 = none, otherwise stripe period in pixels
  int stripe_gain;  // brightness added on odd stripes
};

// Indexed like synthetic_classes().
const std::vector<Signature>& signatures() {
  static const std::vector<Signature> s{
      {{120, 170, 235}, 6, 0, 0},     // sky: flat, bright blue
      {{50, 120, 45}, 20, 0, 0},      // tree: green, noisy
      {{50, 120, 45}, 20, 8, 45},     // grass: tree's texture with tall light stripes
      {{175, 70, 55}, 10, 6, -40},    // building: brick red, coarse stripes
      {{150, 110, 70}, 20, 0, 0},     // ground
      {{125, 95, 145}, 8, 0, 0},      // mountain
      {{30, 70, 170}, 14, 4, 20},     // water
      {{230, 200, 40}, 10, 0, 0},     // object
  };
  return s;
}

std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

}  // namespace

const std::vector<int>& synthetic_classes() {
  static const std::vector<int> c{0, 1, 2, 4, 3, 5, 6, 7};
  return c;
}

void SyntheticSpec::validate() const {
  if (images < 1) throw std::invalid_argument("synthetic: images must be >= 1");
  if (height < 8 || width < 8) throw std::invalid_argument("synthetic: images must be at least 8x8");
  if (classes < 1 || classes > kNumClasses) throw std::invalid_argument("synthetic: classes must be in 1..8");
  if (regions < 1) throw std::invalid_argument("synthetic: regions must be >= 1");
}

std::pair<Image, LabelMap> synthetic_scene(const SyntheticSpec& spec, int index) {
  spec.validate();
  std::mt19937_64 rng(spec.seed * 0x100000001B3ull + static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> ux(0.0, spec.width), uy(0.0, spec.height);
  std::uniform_int_distribution<int> pick(0, spec.classes - 1);

  struct Cell {
    double x, y;
    int cls;
  };
  std::vector<Cell> cells(spec.regions);
  for (auto& c : cells) c = {ux(rng), uy(rng), pick(rng)};
  // Every class appears at least once per image when there is room for it.
  for (int c = 0; c < std::min(spec.classes, spec.regions); ++c) cells[c].cls = c;

  Image image(spec.height, spec.width);
  LabelMap labels(spec.height, spec.width);
  for (int r = 0; r < spec.height; ++r) {
    for (int col = 0; col < spec.width; ++col) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const double dx = col + 0.5 - cells[i].x, dy = r + 0.5 - cells[i].y;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      const int slot = cells[best].cls;
      const Signature& sig = signatures()[slot];
      std::uniform_int_distribution<int> noise(-sig.noise, sig.noise);
      const int shift = sig.stripe > 0 && (r / sig.stripe) % 2 == 1 ? sig.stripe_gain : 0;
      image.at(r, col) = {clamp8(sig.base.r + shift + noise(rng)), clamp8(sig.base.g + shift + noise(rng)),
                          clamp8(sig.base.b + shift + noise(rng))};
      labels.at(r, col) = synthetic_classes()[slot];
    }
  }
  return {std::move(image), std::move(labels)};
}

fs::path write_synthetic_dataset(const SyntheticSpec& spec, const fs::path& dir) {
  spec.validate();
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  std::string list;
  for (int i = 0; i < spec.images; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03d", i);
    const auto [image, labels] = synthetic_scene(spec, i);
    save_png(image, dir / "images" / (std::string(name) + ".png"));
    save_int_grid(labels, dir / "labels" / (std::string(name) + ".txt"));
    list += "images/" + std::string(name) + ".png labels/" + std::string(name) + ".txt\n";
  }
  const fs::path list_path = dir / "dataset.txt";
  write_atomically(list_path, [&](std::ostream& out) { out << list; });
  write_atomically(dir / "config.txt", [&](std::ostream& out) {
    out << "# desk-scale run over the generated scenes\n"
        << "dataset=dataset.txt\n"
        << "workspace=workspace\n"
        << "seed=" << spec.seed << "\n"
        << "mor=100\n"
        << "epochs=10\n"
        << "batch_size=32\n"
        << "learning_rate=0.01\n";
  });
  return list_path;
}

}  // namespace evidseg
