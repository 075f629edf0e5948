#pragma once

#include "polycap/camgeom.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace polycap {

/// Metric depth raster, row-major, NaN marks invalid pixels.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(int w, int h, float fill);

  float at(int u, int v) const { return values[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + u]; }
  float& at(int u, int v) { return values[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + u]; }
  /// Nearest pixel D[round(v), round(u)]; NaN outside the raster.
  double sample_nearest(const Vec2& pixel) const;
};

/// "KDM1", u32 width, u32 height, width*height float32, all little-endian.
DepthMap read_depth_map(const std::filesystem::path& path);
void write_depth_map(const std::filesystem::path& path, const DepthMap& map);

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// Vertex-only PLY with float32 x, y, z.
void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, PlyFormat format);
std::vector<Vec3> read_ply(const std::filesystem::path& path);

}  // namespace polycap
