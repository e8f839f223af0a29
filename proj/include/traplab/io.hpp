#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace traplab {

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, flushes, then renames over `path`, so
/// readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Splits one CSV line on commas. Fields may be double-quoted.
std::vector<std::string> split_csv_line(std::string_view line);

/// Lines of `text` with trailing '\r' removed; a trailing empty line is dropped.
std::vector<std::string_view> split_lines(std::string_view text);

}  // namespace traplab
