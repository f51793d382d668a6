// Blob container and CRC checks.

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sdkd/io.hpp"
#include "test_harness.hpp"

using namespace sdkd;

int main() {
    testh::section("crc32 known vectors");
    const char* s = "123456789";
    CHECK(io::crc32(s, 9) == 0xCBF43926u);
    CHECK(io::crc32("", 0) == 0x00000000u);
    CHECK(io::crc32_hex(0xCBF43926u) == "cbf43926");

    testh::section("blob round trips");
    const auto dir = std::filesystem::temp_directory_path() / "sdkd_io_test";
    std::filesystem::create_directories(dir);
    Rng rng(3);
    std::vector<double> values;
    for (int i = 0; i < 257; ++i) values.push_back(rng.uniform(-10, 10));

    // f64 is exact
    io::write_blob(dir / "a.f64", values, "f64");
    auto back = io::read_blob(dir / "a.f64", 257, "f64");
    bool exact = true;
    for (size_t i = 0; i < values.size(); ++i)
        if (back[i] != values[i]) exact = false;
    CHECK(exact);

    // f32 round-trips the f32-rounded values exactly
    io::write_blob(dir / "a.f32", values, "f32");
    back = io::read_blob(dir / "a.f32", 257, "f32");
    exact = true;
    for (size_t i = 0; i < values.size(); ++i)
        if (back[i] != static_cast<double>(static_cast<float>(values[i]))) exact = false;
    CHECK(exact);
    io::write_blob(dir / "b.f32", back, "f32");
    CHECK(io::read_text_file(dir / "a.f32") == io::read_text_file(dir / "b.f32"));

    // crc of serialized form matches what landed on disk
    const std::string raw = io::read_text_file(dir / "a.f32");
    CHECK(io::crc32(raw.data(), raw.size()) == io::blob_crc(values, "f32"));

    testh::section("failure modes");
    CHECK_THROWS(io::read_blob(dir / "missing.bin", 1, "f32"));
    CHECK_THROWS(io::read_blob(dir / "a.f32", 999, "f32"));  // size mismatch
    CHECK_THROWS(io::write_blob(dir / "x.bin", values, "f16"));

    std::filesystem::remove_all(dir);
    return testh::summary("io");
}
