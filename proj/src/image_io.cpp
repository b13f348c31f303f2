#include "ogrg/image_io.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include <png.h>

#include "ogrg/tensor.hpp"

namespace ogrg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, int w, int h, int color_type, int bit_depth,
               const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw InputError("png: cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw NumericError("png: writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw NumericError("png: info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw InputError("png: write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // buffers are little-endian
    png_write_image(png, const_cast<png_bytep*>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data) {
    if (data.size() != static_cast<std::size_t>(w) * h * 3) throw DimensionError("png: rgb8 size mismatch");
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * w * 3);
    write_png(path, w, h, PNG_COLOR_TYPE_RGB, 8, rows);
}

void write_png_gray8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data) {
    if (data.size() != static_cast<std::size_t>(w) * h) throw DimensionError("png: gray8 size mismatch");
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * w);
    write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 8, rows);
}

void write_png_gray16(const std::string& path, int w, int h, const std::vector<std::uint16_t>& data) {
    if (data.size() != static_cast<std::size_t>(w) * h) throw DimensionError("png: gray16 size mismatch");
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(reinterpret_cast<const png_byte*>(data.data() + static_cast<std::size_t>(y) * w));
    write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 16, rows);
}

PngImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw InputError("png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw NumericError("png: reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw NumericError("png: info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InputError("png: read failed for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    PngImage img;
    img.w = static_cast<int>(png_get_image_width(png, info));
    img.h = static_cast<int>(png_get_image_height(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (img.bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);

    img.channels = static_cast<int>(png_get_channels(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);

    std::vector<std::uint8_t> raw(row_bytes * static_cast<std::size_t>(img.h));
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + static_cast<std::size_t>(y) * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (img.bit_depth == 16) {
        if (img.channels != 1) throw InputError("png: 16-bit images must be single channel: " + path);
        img.data16.resize(static_cast<std::size_t>(img.w) * img.h);
        std::memcpy(img.data16.data(), raw.data(), img.data16.size() * 2);
    } else {
        img.data8 = std::move(raw);
        img.data8.resize(static_cast<std::size_t>(img.w) * img.h * img.channels);
    }
    return img;
}

}  // namespace ogrg
