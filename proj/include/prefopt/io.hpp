#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prefopt::io {

// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Little-endian f64 encoding independent of host byte order.
void append_f64_le(std::string& out, std::span<const double> values);
std::vector<double> parse_f64_le(std::string_view bytes);

}  // namespace prefopt::io
