#include "evidseg/pixelgrid.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "evidseg/io_util.hpp"
#include "evidseg/slic.hpp"

namespace evidseg {

namespace fs = std::filesystem;

IoError::IoError(const fs::path& path, const std::string& reason)
    : std::runtime_error(path.string() + ": " + reason), path_(path) {}

Image::Image(int height, int width, Rgb fill)
    : Image(height, width,
            std::vector<Rgb>(static_cast<std::size_t>(std::max(height, 0)) *
                                 static_cast<std::size_t>(std::max(width, 0)),
                             fill)) {}

Image::Image(int height, int width, std::vector<Rgb> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height < 1 || width < 1) throw std::invalid_argument("image dimensions must be positive");
  if (data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw std::invalid_argument("image data length does not match height * width");
}

LabelMap::LabelMap(int height, int width, int fill)
    : LabelMap(height, width,
               std::vector<int>(static_cast<std::size_t>(std::max(height, 0)) *
                                    static_cast<std::size_t>(std::max(width, 0)),
                                fill)) {}

LabelMap::LabelMap(int height, int width, std::vector<int> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (height < 1 || width < 1) throw std::invalid_argument("grid dimensions must be positive");
  if (labels_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw std::invalid_argument("grid data length does not match height * width");
}

ClassSet::ClassSet(std::array<std::string, kNumClasses> names,
                   std::array<Rgb, kNumClasses> colors)
    : names_(std::move(names)), colors_(colors) {
  std::set<std::string> unique_names(names_.begin(), names_.end());
  if (unique_names.size() != names_.size()) throw std::invalid_argument("class names must be unique");
  for (int i = 0; i < kNumClasses; ++i)
    for (int j = i + 1; j < kNumClasses; ++j)
      if (colors_[i] == colors_[j]) throw std::invalid_argument("class colors must be distinct");
}

const ClassSet& ClassSet::standard() {
  static const ClassSet classes(
      {"sky", "tree", "grass", "ground", "building", "mountain", "water", "object"},
      {Rgb{128, 179, 255}, Rgb{0, 100, 0}, Rgb{100, 220, 60}, Rgb{150, 100, 50},
       Rgb{200, 0, 0}, Rgb{130, 60, 160}, Rgb{0, 60, 200}, Rgb{255, 200, 0}});
  return classes;
}

namespace {

bool has_png_signature(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  return in.gcount() == 8 && png_sig_cmp(sig.data(), 0, 8) == 0;
}

Image load_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError(path, std::string("malformed PNG: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  if (img.height == 0 || img.width == 0) {
    png_image_free(&img);
    throw IoError(path, "empty PNG");
  }
  std::vector<Rgb> data(static_cast<std::size_t>(img.height) * img.width);
  static_assert(sizeof(Rgb) == 3);
  if (!png_image_finish_read(&img, nullptr, data.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path, "truncated or corrupt PNG: " + msg);
  }
  return Image(static_cast<int>(img.height), static_cast<int>(img.width), std::move(data));
}

// Reads the next whitespace-delimited PPM header token, skipping comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Image load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  if (ppm_token(in) != "P6") throw IoError(path, "unsupported format (expected PNG or binary PPM)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw IoError(path, "malformed PPM header");
  }
  if (w < 1 || h < 1) throw IoError(path, "malformed PPM header: non-positive dimensions");
  if (maxval != 255) throw IoError(path, "unsupported PPM maxval (only 255)");
  std::vector<Rgb> data(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 3));
  if (static_cast<std::size_t>(in.gcount()) != data.size() * 3) throw IoError(path, "truncated PPM data");
  return Image(h, w, std::move(data));
}

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError(path, "file does not exist");
  if (has_png_signature(path)) return load_png(path);
  return load_ppm(path);
}

void save_png(const Image& image, const fs::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    const void* pixels = image.pixels().data();
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr))
      throw IoError(path, std::string("PNG encode failed: ") + img.message);
    std::vector<char> buf(size);
    if (!png_image_write_to_memory(&img, buf.data(), &size, 0, pixels, 0, nullptr))
      throw IoError(path, std::string("PNG encode failed: ") + img.message);
    out.write(buf.data(), static_cast<std::streamsize>(size));
  });
}

LabelMap load_int_grid(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::vector<int> values;
  int width = -1;
  int height = 0;
  std::string line;
  while (std::getline(in, line)) {
    int count = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
      if (p == end) break;
      int v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{})
        throw IoError(path, "non-integer token on row " + std::to_string(height + 1));
      values.push_back(v);
      ++count;
      p = next;
    }
    if (count == 0) continue;
    if (width < 0) width = count;
    if (count != width)
      throw IoError(path, "row " + std::to_string(height + 1) + " has " + std::to_string(count) +
                              " values, expected " + std::to_string(width));
    ++height;
  }
  if (height == 0) throw IoError(path, "empty grid");
  return LabelMap(height, width, std::move(values));
}

void save_int_grid(const LabelMap& grid, const fs::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    std::string row;
    for (int r = 0; r < grid.height(); ++r) {
      row.clear();
      for (int c = 0; c < grid.width(); ++c) {
        if (c) row.push_back(' ');
        row += std::to_string(grid.at(r, c));
      }
      row.push_back('\n');
      out << row;
    }
  });
}

LabelMap load_label_map(const fs::path& path, int expected_h, int expected_w) {
  LabelMap grid = load_int_grid(path);
  if (grid.height() != expected_h || grid.width() != expected_w)
    throw IoError(path, "dimension mismatch: got " + std::to_string(grid.height()) + "x" +
                            std::to_string(grid.width()) + ", expected " +
                            std::to_string(expected_h) + "x" + std::to_string(expected_w));
  for (std::size_t i = 0; i < grid.labels().size(); ++i) {
    int v = grid.labels()[i];
    if (v < kVoidLabel || v >= kNumClasses)
      throw IoError(path, "label " + std::to_string(v) + " out of range at row " +
                              std::to_string(i / grid.width() + 1));
  }
  return grid;
}

Image render_overlay(const Image& image, const SuperpixelMap& superpixels,
                     std::span<const int> predictions, const ClassSet& classes) {
  if (superpixels.height() != image.height() || superpixels.width() != image.width())
    throw std::invalid_argument("superpixel map does not match image dimensions");
  for (int id = 0; id < superpixels.k(); ++id) {
    if (static_cast<std::size_t>(id) >= predictions.size() || predictions[id] < 0 ||
        predictions[id] >= kNumClasses)
      throw std::invalid_argument("missing prediction for superpixel id " + std::to_string(id));
  }
  const int h = image.height();
  const int w = image.width();
  Image out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int id = superpixels.at(r, c);
      const bool boundary = r == 0 || c == 0 || r == h - 1 || c == w - 1 ||
                            superpixels.at(r - 1, c) != id || superpixels.at(r + 1, c) != id ||
                            superpixels.at(r, c - 1) != id || superpixels.at(r, c + 1) != id;
      if (boundary) continue;  // stays black
      const Rgb src = image.at(r, c);
      const Rgb cls = classes.color(predictions[id]);
      auto blend = [](std::uint8_t a, std::uint8_t b) {
        return static_cast<std::uint8_t>((a + b + 1) / 2);
      };
      out.at(r, c) = {blend(src.r, cls.r), blend(src.g, cls.g), blend(src.b, cls.b)};
    }
  }
  return out;
}

void save_overlay(const Image& image, const SuperpixelMap& superpixels,
                  std::span<const int> predictions, const ClassSet& classes,
                  const fs::path& path) {
  save_png(render_overlay(image, superpixels, predictions, classes), path);
}

}  // namespace evidseg
