#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace perflaw::detail {

std::vector<std::string_view> split_lines(std::string_view text);
std::vector<std::string_view> split(std::string_view text, char sep);
std::vector<std::string_view> split_whitespace(std::string_view text);
std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename, so readers never see a partial file.
void write_file(const std::filesystem::path& path, const std::string& contents);
void append_file(const std::filesystem::path& path, const std::string& contents);

/// Shortest decimal representation that round-trips.
std::string format_double(double value);

}  // namespace perflaw::detail
