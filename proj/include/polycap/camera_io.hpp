#pragma once

#include "polycap/camgeom.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace polycap {

/// Length units of a camera set: "scene" before metric scaling, "meters" after.
struct CameraSet {
  std::string units = "scene";
  std::vector<CameraModel> cameras;
};

nlohmann::json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const nlohmann::json& j);

nlohmann::json camera_set_to_json(const CameraSet& set);
CameraSet camera_set_from_json(const nlohmann::json& j);

CameraSet read_camera_file(const std::filesystem::path& path);
void write_camera_file(const std::filesystem::path& path, const CameraSet& set);

/// Reads a whole file; throws IoError.
std::string read_text_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes (truncate + write); throws IoError.
void write_text_file(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace polycap
