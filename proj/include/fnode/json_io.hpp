#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace fnode::io {

// 17 significant digits, which parse back to the same f64.
std::string format_double(double v);

// Compact JSON with every floating-point number written by format_double.
std::string dump_exact(const nlohmann::json& j);

// Writes through a sibling temp file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace fnode::io
