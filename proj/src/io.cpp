#include "rulens/io.hpp"

#include "rulens/error.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rulens::io {

static_assert(std::endian::native == std::endian::little,
              "binary arrays are stored little-endian");

std::uint32_t crc32(std::span<const double> values, std::uint32_t seed) {
  return static_cast<std::uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(values.data()),
              static_cast<uInt>(values.size_bytes())));
}

std::uint32_t crc32(std::string_view bytes, std::uint32_t seed) {
  return static_cast<std::uint32_t>(::crc32(
      seed, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string hex32(std::uint32_t value) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", value);
  return buf;
}

namespace {

void write_bytes_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_bytes_atomic(path, text.data(), text.size());
}

std::string read_text(const std::filesystem::path& path) { return slurp(path); }

void write_f64(const std::filesystem::path& path, std::span<const double> values) {
  write_bytes_atomic(path, reinterpret_cast<const char*>(values.data()), values.size_bytes());
}

std::vector<double> read_f64(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() % sizeof(double) != 0) {
    throw IntegrityError(path.string() + ": size is not a multiple of 8 bytes");
  }
  std::vector<double> values(bytes.size() / sizeof(double));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

}  // namespace rulens::io
