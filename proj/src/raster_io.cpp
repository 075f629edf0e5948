#include "polycap/raster_io.hpp"

#include "polycap/error.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace polycap {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) fail(ErrorCode::IoError, "truncated " + path.string());
  return value;
}

}  // namespace

DepthMap::DepthMap(int w, int h, float fill)
    : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

double DepthMap::sample_nearest(const Vec2& pixel) const {
  const double u = std::round(pixel.x());
  const double v = std::round(pixel.y());
  if (!(u >= 0 && v >= 0 && u < width && v < height)) return std::numeric_limits<double>::quiet_NaN();
  return at(static_cast<int>(u), static_cast<int>(v));
}

DepthMap read_depth_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "KDM1", 4) != 0) {
    fail(ErrorCode::IoError, path.string() + " is not a KDM1 depth map");
  }
  DepthMap map;
  map.width = static_cast<int>(get<std::uint32_t>(in, path));
  map.height = static_cast<int>(get<std::uint32_t>(in, path));
  if (map.width <= 0 || map.height <= 0) fail(ErrorCode::IoError, "empty depth map " + path.string());
  map.values.resize(static_cast<std::size_t>(map.width) * static_cast<std::size_t>(map.height));
  if (!in.read(reinterpret_cast<char*>(map.values.data()),
               static_cast<std::streamsize>(map.values.size() * sizeof(float)))) {
    fail(ErrorCode::IoError, "truncated depth map " + path.string());
  }
  return map;
}

void write_depth_map(const std::filesystem::path& path, const DepthMap& map) {
  if (map.values.size() != static_cast<std::size_t>(map.width) * static_cast<std::size_t>(map.height)) {
    fail(ErrorCode::DimensionMismatch, "depth map size does not match its dimensions");
  }
  auto out = open_out(path);
  out.write("KDM1", 4);
  put(out, static_cast<std::uint32_t>(map.width));
  put(out, static_cast<std::uint32_t>(map.height));
  out.write(reinterpret_cast<const char*>(map.values.data()),
            static_cast<std::streamsize>(map.values.size() * sizeof(float)));
}

void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, PlyFormat format) {
  auto out = open_out(path);
  out << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\nend_header\n"
      << std::setprecision(9);
  for (const auto& p : points) {
    const float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())};
    if (format == PlyFormat::Ascii) {
      out << xyz[0] << ' ' << xyz[1] << ' ' << xyz[2] << '\n';
    } else {
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
  }
}

std::vector<Vec3> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::size_t count = 0;
  bool binary = false;
  int properties = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string kind;
      ss >> kind;
      binary = kind == "binary_little_endian";
      if (!binary && kind != "ascii") fail(ErrorCode::IoError, "unsupported PLY format " + kind);
    } else if (word == "element") {
      std::string name;
      ss >> name >> count;
    } else if (word == "property") {
      ++properties;
    } else if (word == "end_header") {
      break;
    }
  }
  if (properties != 3) fail(ErrorCode::IoError, "PLY must hold exactly x, y, z float properties");
  std::vector<Vec3> points(count);
  for (auto& p : points) {
    float xyz[3];
    if (binary) {
      if (!in.read(reinterpret_cast<char*>(xyz), sizeof(xyz))) fail(ErrorCode::IoError, "truncated PLY");
    } else if (!(in >> xyz[0] >> xyz[1] >> xyz[2])) {
      fail(ErrorCode::IoError, "truncated PLY");
    }
    p = Vec3(xyz[0], xyz[1], xyz[2]);
  }
  return points;
}

}  // namespace polycap
