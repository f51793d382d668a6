#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sdkd::io {

// CRC-32 (reflected, polynomial 0xEDB88320), the usual zlib/PNG variant.
uint32_t crc32(const void* data, size_t n, uint32_t seed = 0);
std::string crc32_hex(uint32_t crc);

// Raw numeric blobs: little-endian scalars, row-major order. dtype is either
// "f32" or "f64"; values are held as doubles in memory either way.
void write_blob(const std::filesystem::path& path, const std::vector<double>& values,
                const std::string& dtype);
std::vector<double> read_blob(const std::filesystem::path& path, int64_t expected_count,
                              const std::string& dtype);

// CRC of the serialized form (what write_blob would put on disk).
uint32_t blob_crc(const std::vector<double>& values, const std::string& dtype);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace sdkd::io
