#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace partpool {

/// 8-bit interleaved RGB image.
struct ImageU8 {
    std::size_t width = 0, height = 0, channels = 0; // channels: 1 or 3
    std::vector<std::uint8_t> pixels;                // row-major, interleaved

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * channels + c];
    }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

// Binary PPM (P6) / PGM (P5), maxval 255. Writes are byte-deterministic.
void write_ppm(const std::string& path, const ImageU8& img); // channels == 3
void write_pgm(const std::string& path, const ImageU8& img); // channels == 1
ImageU8 read_ppm(const std::string& path);
ImageU8 read_pgm(const std::string& path);

} // namespace partpool
