#include "evidseg/region_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "evidseg/io_util.hpp"

namespace evidseg {

namespace fs = std::filesystem;

RegionAdjacencyGraph::RegionAdjacencyGraph(std::vector<std::vector<int>> adjacency)
    : adjacency_(std::move(adjacency)) {
  const int k = static_cast<int>(adjacency_.size());
  for (int i = 0; i < k; ++i) {
    auto& list = adjacency_[i];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    for (int j : list) {
      if (j < 0 || j >= k) throw std::invalid_argument("adjacency id out of range");
      if (j == i) throw std::invalid_argument("adjacency contains a self loop");
    }
  }
  for (int i = 0; i < k; ++i)
    for (int j : adjacency_[i])
      if (!std::binary_search(adjacency_[j].begin(), adjacency_[j].end(), i))
        throw std::invalid_argument("adjacency is not symmetric");
}

NeighborLevel::NeighborLevel(int level) : level_(level) {
  if (level < 0 || level > kMax)
    throw std::invalid_argument("neighbor level must lie in [0, " + std::to_string(kMax) + "]");
}

RegionAdjacencyGraph build_adjacency(const SuperpixelMap& superpixels, Connectivity connectivity) {
  const int h = superpixels.height();
  const int w = superpixels.width();
  std::vector<std::set<int>> sets(superpixels.k());
  auto link = [&](int a, int b) {
    if (a == b) return;
    sets[a].insert(b);
    sets[b].insert(a);
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int id = superpixels.at(r, c);
      if (c + 1 < w) link(id, superpixels.at(r, c + 1));
      if (r + 1 < h) link(id, superpixels.at(r + 1, c));
      if (connectivity == Connectivity::Eight && r + 1 < h) {
        if (c + 1 < w) link(id, superpixels.at(r + 1, c + 1));
        if (c > 0) link(id, superpixels.at(r + 1, c - 1));
      }
    }
  }
  std::vector<std::vector<int>> adjacency(superpixels.k());
  for (int i = 0; i < superpixels.k(); ++i) adjacency[i].assign(sets[i].begin(), sets[i].end());
  return RegionAdjacencyGraph(std::move(adjacency));
}

std::vector<int> dilate_region(const RegionAdjacencyGraph& graph, int seed, NeighborLevel level) {
  if (seed < 0 || seed >= graph.k())
    throw std::out_of_range("seed superpixel " + std::to_string(seed) + " out of range");
  std::vector<int> depth(graph.k(), -1);
  std::deque<int> queue{seed};
  depth[seed] = 0;
  std::vector<int> out;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    out.push_back(u);
    if (depth[u] == level.value()) continue;
    for (int v : graph.neighbors(u)) {
      if (depth[v] >= 0) continue;
      depth[v] = depth[u] + 1;
      queue.push_back(v);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

BoundingBox minimal_bbox(const SuperpixelMap& superpixels, std::span<const int> ids) {
  if (ids.empty()) throw std::invalid_argument("minimal_bbox needs at least one superpixel id");
  std::vector<char> member(superpixels.k(), 0);
  for (int id : ids) {
    if (id < 0 || id >= superpixels.k())
      throw std::out_of_range("superpixel id " + std::to_string(id) + " out of range");
    member[id] = 1;
  }
  BoundingBox box{superpixels.height(), superpixels.width(), -1, -1};
  for (int r = 0; r < superpixels.height(); ++r) {
    for (int c = 0; c < superpixels.width(); ++c) {
      if (!member[superpixels.at(r, c)]) continue;
      box.top = std::min(box.top, r);
      box.left = std::min(box.left, c);
      box.bottom = std::max(box.bottom, r);
      box.right = std::max(box.right, c);
    }
  }
  return box;
}

std::vector<BoundingBox> superpixel_boxes(const SuperpixelMap& superpixels) {
  std::vector<BoundingBox> boxes(superpixels.k(),
                                 BoundingBox{superpixels.height(), superpixels.width(), -1, -1});
  for (int r = 0; r < superpixels.height(); ++r) {
    for (int c = 0; c < superpixels.width(); ++c) {
      BoundingBox& b = boxes[superpixels.at(r, c)];
      b.top = std::min(b.top, r);
      b.left = std::min(b.left, c);
      b.bottom = std::max(b.bottom, r);
      b.right = std::max(b.right, c);
    }
  }
  return boxes;
}

std::vector<float> masked_crop(const Image& image, const SuperpixelMap& superpixels,
                               std::span<const int> ids, const BoundingBox& box) {
  std::vector<char> member(superpixels.k(), 0);
  for (int id : ids) member.at(id) = 1;
  std::vector<float> crop(static_cast<std::size_t>(box.height()) * box.width() * 3, 0.0f);
  for (int r = box.top; r <= box.bottom; ++r) {
    for (int c = box.left; c <= box.right; ++c) {
      if (!member[superpixels.at(r, c)]) continue;
      const Rgb px = image.at(r, c);
      float* dst = crop.data() +
                   (static_cast<std::size_t>(r - box.top) * box.width() + (c - box.left)) * 3;
      dst[0] = px.r / 255.0f;
      dst[1] = px.g / 255.0f;
      dst[2] = px.b / 255.0f;
    }
  }
  return crop;
}

std::vector<float> resize_bilinear(std::span<const float> src, int src_h, int src_w, int dst_h,
                                   int dst_w) {
  std::vector<float> dst(static_cast<std::size_t>(dst_h) * dst_w * 3);
  if (src_h == dst_h && src_w == dst_w) {
    std::copy(src.begin(), src.end(), dst.begin());
    return dst;
  }
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int r = 0; r < dst_h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int c = 0; c < dst_w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        auto at = [&](int y, int x) {
          return static_cast<double>(src[(static_cast<std::size_t>(y) * src_w + x) * 3 + ch]);
        };
        const double top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
        const double bot = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
        dst[(static_cast<std::size_t>(r) * dst_w + c) * 3 + ch] =
            static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return dst;
}

Patch extract_patch(const Image& image, const SuperpixelMap& superpixels,
                    const RegionAdjacencyGraph& graph, int seed, NeighborLevel level, int side) {
  if (side < 1) throw std::invalid_argument("patch side must be positive");
  if (superpixels.height() != image.height() || superpixels.width() != image.width())
    throw std::invalid_argument("superpixel map does not match image dimensions");
  const std::vector<int> ids = dilate_region(graph, seed, level);
  const BoundingBox box = minimal_bbox(superpixels, ids);
  const std::vector<float> crop = masked_crop(image, superpixels, ids, box);
  return Patch{side, resize_bilinear(crop, box.height(), box.width(), side, side), seed, level};
}

Patch extract_patch(const Image& image, const SuperpixelMap& superpixels,
                    const RegionAdjacencyGraph& graph, std::span<const BoundingBox> boxes,
                    int seed, NeighborLevel level, int side) {
  if (side < 1) throw std::invalid_argument("patch side must be positive");
  if (boxes.size() != static_cast<std::size_t>(superpixels.k()))
    throw std::invalid_argument("box table does not match superpixel count");
  const std::vector<int> ids = dilate_region(graph, seed, level);
  BoundingBox box = boxes[ids.front()];
  for (int id : ids) {
    box.top = std::min(box.top, boxes[id].top);
    box.left = std::min(box.left, boxes[id].left);
    box.bottom = std::max(box.bottom, boxes[id].bottom);
    box.right = std::max(box.right, boxes[id].right);
  }
  const std::vector<float> crop = masked_crop(image, superpixels, ids, box);
  return Patch{side, resize_bilinear(crop, box.height(), box.width(), side, side), seed, level};
}

void PatchBatch::append(const Patch& patch, const PatchRecord& record) {
  if (side == 0) side = patch.side;
  if (patch.side != side) throw std::invalid_argument("patch side does not match batch side");
  data.insert(data.end(), patch.data.begin(), patch.data.end());
  records.push_back(record);
}

void save_patch_batch(const PatchBatch& batch, const fs::path& tensor_path,
                      const fs::path& sidecar_path) {
  write_atomically(tensor_path, [&](std::ostream& out) {
    write_u32_le(out, static_cast<std::uint32_t>(batch.count()));
    write_u32_le(out, static_cast<std::uint32_t>(batch.side));
    write_u32_le(out, 3);
    for (float v : batch.data) write_f32_le(out, v);
  });
  write_atomically(sidecar_path, [&](std::ostream& out) {
    for (const auto& r : batch.records)
      out << r.image_id << ' ' << r.superpixel_id << ' ' << r.ground_truth << '\n';
  });
}

PatchBatch load_patch_batch(const fs::path& tensor_path, const fs::path& sidecar_path) {
  std::ifstream in(tensor_path, std::ios::binary);
  if (!in) throw IoError(tensor_path, "cannot open patch tensor");
  PatchBatch batch;
  std::uint32_t count = 0;
  try {
    count = read_u32_le(in);
    batch.side = static_cast<int>(read_u32_le(in));
    if (read_u32_le(in) != 3) throw IoError(tensor_path, "expected 3 channels");
    batch.data.resize(static_cast<std::size_t>(count) * batch.patch_size());
    for (float& v : batch.data) v = read_f32_le(in);
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(tensor_path, std::string("truncated patch tensor: ") + e.what());
  }
  std::ifstream side(sidecar_path);
  if (!side) throw IoError(sidecar_path, "cannot open patch sidecar");
  PatchRecord rec;
  while (side >> rec.image_id >> rec.superpixel_id >> rec.ground_truth) batch.records.push_back(rec);
  if (!side.eof()) throw IoError(sidecar_path, "malformed sidecar row");
  if (batch.records.size() != count)
    throw IoError(sidecar_path, "sidecar has " + std::to_string(batch.records.size()) +
                                    " rows, tensor has " + std::to_string(count));
  return batch;
}

}  // namespace evidseg
