#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rulens::io {

std::uint32_t crc32(std::span<const double> values,
                    std::uint32_t seed = 0);
std::uint32_t crc32(std::string_view bytes, std::uint32_t seed = 0);
std::string hex32(std::uint32_t value);

// Writes to `<path>.tmp` and renames over `path`.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// Flat little-endian IEEE-754 doubles, no header.
void write_f64(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64(const std::filesystem::path& path);

}  // namespace rulens::io
