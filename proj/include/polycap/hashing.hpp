#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace polycap {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
/// Throws IoError.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace polycap
