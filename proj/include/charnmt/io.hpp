#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace charnmt {

// Reads a UTF-8 text file into lines without their terminators. A missing
// file raises PathError.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes through a temporary sibling and renames into place, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
void write_lines_atomic(const std::filesystem::path& path, std::span<const std::string> lines);

std::string read_file(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

std::vector<std::string> split_whitespace(std::string_view line);
std::string join(std::span<const std::string> parts, std::string_view separator);

}  // namespace charnmt
