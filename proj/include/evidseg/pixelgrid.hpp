#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evidseg {

inline constexpr int kNumClasses = 8;
inline constexpr int kVoidLabel = -1;

/// Raised for any file that cannot be read, parsed or written. The message
/// always carries the offending path.
class IoError : public std::runtime_error {
 public:
  IoError(const std::filesystem::path& path, const std::string& reason);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major 8-bit RGB raster.
class Image {
 public:
  Image(int height, int width, Rgb fill = {});
  Image(int height, int width, std::vector<Rgb> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  const Rgb& at(int row, int col) const { return data_[index(row, col)]; }
  Rgb& at(int row, int col) { return data_[index(row, col)]; }
  std::span<const Rgb> pixels() const { return data_; }
  std::span<Rgb> pixels() { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_;
  int width_;
  std::vector<Rgb> data_;
};

/// Row-major integer grid. Used for ground-truth label maps (values in
/// {-1..7}) and, with ids instead of classes, for cached superpixel maps.
class LabelMap {
 public:
  LabelMap(int height, int width, int fill = kVoidLabel);
  LabelMap(int height, int width, std::vector<int> labels);

  int height() const { return height_; }
  int width() const { return width_; }
  int at(int row, int col) const {
    return labels_[static_cast<std::size_t>(row) * width_ + col];
  }
  int& at(int row, int col) {
    return labels_[static_cast<std::size_t>(row) * width_ + col];
  }
  std::span<const int> labels() const { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_;
  int width_;
  std::vector<int> labels_;
};

/// The eight scene classes and their overlay colors.
class ClassSet {
 public:
  ClassSet(std::array<std::string, kNumClasses> names,
           std::array<Rgb, kNumClasses> colors);

  static const ClassSet& standard();

  const std::string& name(int cls) const { return names_.at(cls); }
  const Rgb& color(int cls) const { return colors_.at(cls); }
  const std::array<std::string, kNumClasses>& names() const { return names_; }

 private:
  std::array<std::string, kNumClasses> names_;
  std::array<Rgb, kNumClasses> colors_;
};

// Raster I/O. PNG (8-bit RGB) is read and written; binary PPM (P6) is read.
Image load_image(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

// Whitespace-separated integer grids.
LabelMap load_int_grid(const std::filesystem::path& path);
void save_int_grid(const LabelMap& grid, const std::filesystem::path& path);

/// Loads a ground-truth grid and checks its shape and value range.
LabelMap load_label_map(const std::filesystem::path& path, int expected_h,
                        int expected_w);

class SuperpixelMap;

/// 50/50 blend of each pixel with its predicted class color. Pixels on a
/// superpixel boundary or on the image frame are drawn black.
Image render_overlay(const Image& image, const SuperpixelMap& superpixels,
                     std::span<const int> predictions, const ClassSet& classes);

void save_overlay(const Image& image, const SuperpixelMap& superpixels,
                  std::span<const int> predictions, const ClassSet& classes,
                  const std::filesystem::path& path);

}  // namespace evidseg
