#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>

namespace evidseg {

/// Writes through `writer` into a sibling temp file, then renames it over
/// `path`. A failed writer leaves any previous file untouched.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

std::string read_text_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 digests.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Little-endian scalar I/O for the binary tensor and model formats.
void write_u32_le(std::ostream& out, std::uint32_t value);
void write_f32_le(std::ostream& out, float value);
std::uint32_t read_u32_le(std::istream& in);
float read_f32_le(std::istream& in);

/// Shortest decimal that round-trips a double.
std::string format_double(double value);

}  // namespace evidseg
