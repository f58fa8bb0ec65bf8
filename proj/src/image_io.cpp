// SPDX-License-Identifier: Apache-2.0
#include "patchlab/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

namespace patchlab {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char quantize(double v) {
    const double c = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

} // namespace

void write_png(const std::filesystem::path& path, const Tensor& chw) {
    require(chw.rank() == 3, ErrKind::validation, "write_png expects [C,H,W]");
    const int c = chw.shape[0], h = chw.shape[1], w = chw.shape[2];
    require(c == 1 || c == 3, ErrKind::validation, "write_png supports 1 or 3 channels");

    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) fail(ErrKind::io, "cannot open ", path.string(), " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrKind::io, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrKind::io, "libpng write failed for ", path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ci = 0; ci < c; ++ci)
                row[static_cast<size_t>(x) * c + ci] = quantize(chw.at3(ci, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) fail(ErrKind::io, "cannot open ", path.string(), " for reading");

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        fail(ErrKind::parse, path.string(), ": not a PNG file (bad signature at byte offset 0)");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrKind::io, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrKind::parse, path.string(), ": PNG decode failed");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // normalize everything to 8-bit gray or rgb
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrKind::parse, path.string(), ": unsupported channel count ",
             static_cast<int>(channels));
    }

    std::vector<unsigned char> row(static_cast<size_t>(w) * channels);
    Tensor out({channels, static_cast<int>(h), static_cast<int>(w)});
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int ci = 0; ci < channels; ++ci)
                out.at3(ci, static_cast<int>(y), static_cast<int>(x)) =
                    row[static_cast<size_t>(x) * channels + ci] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

Tensor normalize_for_view(const Tensor& chw) {
    Tensor out = chw;
    const double lo = min_value(chw);
    const double hi = max_value(chw);
    if (hi - lo < 1e-12) {
        for (double& v : out.data) v = 0.5;
        return out;
    }
    for (double& v : out.data) v = (v - lo) / (hi - lo);
    return out;
}

} // namespace patchlab
