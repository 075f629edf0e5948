#include "polycap/camera_io.hpp"

#include "polycap/error.hpp"

#include <fstream>
#include <sstream>

namespace polycap {

using nlohmann::json;

json camera_to_json(const CameraModel& c) {
  const Quat& q = c.pose.rotation;
  const Vec3& t = c.pose.translation;
  json j;
  j["id"] = c.id;
  j["width"] = c.intrinsics.width;
  j["height"] = c.intrinsics.height;
  j["fx"] = c.intrinsics.fx;
  j["fy"] = c.intrinsics.fy;
  j["cx"] = c.intrinsics.cx;
  j["cy"] = c.intrinsics.cy;
  j["dist"] = c.distortion.to_array();
  j["q"] = {q.w(), q.x(), q.y(), q.z()};
  j["t"] = {t.x(), t.y(), t.z()};
  return j;
}

CameraModel camera_from_json(const json& j) {
  try {
    CameraModel c;
    c.id = j.at("id").get<std::string>();
    c.intrinsics.width = j.at("width").get<int>();
    c.intrinsics.height = j.at("height").get<int>();
    c.intrinsics.fx = j.at("fx").get<double>();
    c.intrinsics.fy = j.at("fy").get<double>();
    c.intrinsics.cx = j.at("cx").get<double>();
    c.intrinsics.cy = j.at("cy").get<double>();
    if (j.contains("dist")) c.distortion = Distortion::from_array(j.at("dist").get<std::array<double, 5>>());
    if (j.contains("q")) {
      const auto q = j.at("q").get<std::array<double, 4>>();
      c.pose.rotation = Quat(q[0], q[1], q[2], q[3]);
      c.pose.rotation.normalize();
    }
    if (j.contains("t")) {
      const auto t = j.at("t").get<std::array<double, 3>>();
      c.pose.translation = Vec3(t[0], t[1], t[2]);
    }
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, std::string("malformed camera record: ") + e.what());
  }
}

json camera_set_to_json(const CameraSet& set) {
  json cams = json::array();
  for (const auto& c : set.cameras) cams.push_back(camera_to_json(c));
  return json{{"units", set.units}, {"cameras", cams}};
}

CameraSet camera_set_from_json(const json& j) {
  CameraSet set;
  const json* list = &j;
  if (j.is_object()) {
    set.units = j.value("units", std::string("scene"));
    list = &j.at("cameras");
  }
  if (!list->is_array()) fail(ErrorCode::IoError, "camera file must hold an array of cameras");
  for (const auto& item : *list) set.cameras.push_back(camera_from_json(item));
  return set;
}

CameraSet read_camera_file(const std::filesystem::path& path) {
  CameraSet set = camera_set_from_json(read_json_file(path));
  for (const auto& c : set.cameras) validate_camera(c);
  return set;
}

void write_camera_file(const std::filesystem::path& path, const CameraSet& set) {
  write_json_file(path, camera_set_to_json(set));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::IoError, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace polycap
