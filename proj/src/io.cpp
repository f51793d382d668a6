#include "sdkd/io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sdkd::io {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

// serialize one double as little-endian bytes of the requested dtype
void append_scalar(std::vector<unsigned char>& out, double v, bool f32) {
    if (f32) {
        float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    } else {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
    }
}

bool dtype_is_f32(const std::string& dtype) {
    if (dtype == "f32") return true;
    if (dtype == "f64") return false;
    throw std::invalid_argument("blob: unknown dtype '" + dtype + "'");
}

std::vector<unsigned char> serialize(const std::vector<double>& values, const std::string& dtype) {
    const bool f32 = dtype_is_f32(dtype);
    std::vector<unsigned char> bytes;
    bytes.reserve(values.size() * (f32 ? 4 : 8));
    for (double v : values) append_scalar(bytes, v, f32);
    return bytes;
}

}  // namespace

uint32_t crc32(const void* data, size_t n, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::string crc32_hex(uint32_t crc) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc);
    return buf;
}

void write_blob(const std::filesystem::path& path, const std::vector<double>& values,
                const std::string& dtype) {
    std::vector<unsigned char> bytes = serialize(values, dtype);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("blob: cannot open for write: " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("blob: write failed: " + path.string());
}

std::vector<double> read_blob(const std::filesystem::path& path, int64_t expected_count,
                              const std::string& dtype) {
    const bool f32 = dtype_is_f32(dtype);
    const size_t scalar_size = f32 ? 4 : 8;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("blob: missing file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() != static_cast<size_t>(expected_count) * scalar_size)
        throw std::runtime_error("blob: size mismatch in " + path.string() + ": expected " +
                                 std::to_string(expected_count * static_cast<int64_t>(scalar_size)) +
                                 " bytes, got " + std::to_string(bytes.size()));
    std::vector<double> values(static_cast<size_t>(expected_count));
    for (size_t i = 0; i < values.size(); ++i) {
        if (f32) {
            uint32_t bits = 0;
            for (size_t b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(bytes[i * 4 + b]) << (8 * b);
            float f;
            std::memcpy(&f, &bits, 4);
            values[i] = static_cast<double>(f);
        } else {
            uint64_t bits = 0;
            for (size_t b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(bytes[i * 8 + b]) << (8 * b);
            double d;
            std::memcpy(&d, &bits, 8);
            values[i] = d;
        }
    }
    return values;
}

uint32_t blob_crc(const std::vector<double>& values, const std::string& dtype) {
    std::vector<unsigned char> bytes = serialize(values, dtype);
    return crc32(bytes.data(), bytes.size());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    os << content;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace sdkd::io
