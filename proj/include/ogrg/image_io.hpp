#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ogrg {

// Minimal PNG I/O: 8-bit RGB, 8-bit gray and 16-bit gray, the three formats
// used by the dataset layout (color, masks, millimeter depth).

void write_png_rgb8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data);
void write_png_gray8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data);
void write_png_gray16(const std::string& path, int w, int h, const std::vector<std::uint16_t>& data);

struct PngImage {
    int w = 0, h = 0;
    int channels = 0;   // 1 or 3
    int bit_depth = 0;  // 8 or 16
    std::vector<std::uint8_t> data8;    // channels interleaved when bit_depth == 8
    std::vector<std::uint16_t> data16;  // single channel when bit_depth == 16
};

PngImage read_png(const std::string& path);

}  // namespace ogrg
