#pragma once

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "confmask/raster.hpp"

namespace confmask {

// PNG I/O for 8- and 16-bit grayscale/RGB images, samples mapped to [0,1]
// (v/255 or v/65535). Anything else — palette, alpha, sub-byte depths — is
// rejected: the pipeline has no meaning for them and silent conversion has
// bitten everyone before.
//
// Binary masks are written as 8-bit grayscale with 255 = trusted and
// 0 = untrusted; the polarity is also recorded in a tEXt chunk so a mask file
// can never be misread as its complement.

struct PngTextChunk {
    std::string key;
    std::string value;
};

inline constexpr const char* kMaskPolarityKey = "mask-polarity";
inline constexpr const char* kMaskPolarityValue = "255=trusted,0=untrusted";

namespace detail {

struct PngReadGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReadGuard() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriteGuard() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

} // namespace detail

/// Loads an 8/16-bit grayscale or RGB PNG; samples are scaled to [0,1].
/// If `text_out` is given, tEXt/zTXt chunks are appended to it.
inline PlanarImage load_png(const std::string& path, std::vector<PngTextChunk>* text_out = nullptr) {
    detail::PngReadGuard g;
    g.fp = std::fopen(path.c_str(), "rb");
    if (!g.fp) throw std::runtime_error("load_png: cannot open " + path);
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw std::runtime_error("load_png: png_create_read_struct failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw std::runtime_error("load_png: png_create_info_struct failed");

    // All C++ objects that outlive a possible longjmp are constructed here.
    std::vector<png_byte> raw;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(g.png)))
        throw std::runtime_error("load_png: libpng failed reading " + path);

    png_init_io(g.png, g.fp);
    png_read_info(g.png, g.info);

    const png_uint_32 w = png_get_image_width(g.png, g.info);
    const png_uint_32 h = png_get_image_height(g.png, g.info);
    const int depth = png_get_bit_depth(g.png, g.info);
    const int color = png_get_color_type(g.png, g.info);

    if (depth != 8 && depth != 16)
        throw std::runtime_error("load_png: " + path + " has unsupported bit depth " +
                                 std::to_string(depth) + " (need 8 or 16)");
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)
        throw std::runtime_error("load_png: " + path +
                                 " has unsupported color type (need grayscale or RGB, "
                                 "no palette/alpha)");
    const int channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;

    if (text_out) {
        png_textp tp = nullptr;
        int num = 0;
        png_get_text(g.png, g.info, &tp, &num);
        for (int i = 0; i < num; ++i)
            text_out->push_back({tp[i].key ? tp[i].key : "", tp[i].text ? tp[i].text : ""});
    }

    png_set_interlace_handling(g.png);
    if (depth == 16) png_set_swap(g.png); // file is big-endian; we want host order
    png_read_update_info(g.png, g.info);

    const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
    raw.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(g.png, rows.data());
    png_read_end(g.png, nullptr);

    const std::size_t n = static_cast<std::size_t>(w) * h * channels;
    std::vector<float> data(n);
    if (depth == 8) {
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(raw[i]) / 255.0f;
    } else {
        // png_set_swap left the samples in host order.
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, raw.data() + i * 2, 2);
            data[i] = static_cast<float>(v) / 65535.0f;
        }
    }
    return PlanarImage::from_data(static_cast<int>(w), static_cast<int>(h), channels,
                                  std::move(data));
}

/// Saves as grayscale (1 channel) or RGB (3 channels) PNG at the given bit
/// depth (8 or 16). Samples must be in [0,1]; they are quantized by
/// round(v * (2^depth - 1)).
inline void save_png(const PlanarImage& img, const std::string& path, int bit_depth = 8,
                     const std::vector<PngTextChunk>& text = {}) {
    if (img.empty()) throw std::invalid_argument("save_png: empty image");
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("save_png: bit depth must be 8 or 16");
    for (float v : img.values())
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("save_png: sample outside [0,1]");

    const int w = img.width(), h = img.height(), c = img.channels();
    const std::size_t rowbytes =
        static_cast<std::size_t>(w) * c * (bit_depth == 8 ? 1 : 2);
    std::vector<png_byte> raw(rowbytes * h);
    const auto src = img.values();
    if (bit_depth == 8) {
        for (std::size_t i = 0; i < src.size(); ++i)
            raw[i] = static_cast<png_byte>(std::lround(src[i] * 255.0f));
    } else {
        for (std::size_t i = 0; i < src.size(); ++i) {
            const auto v = static_cast<std::uint16_t>(std::lround(src[i] * 65535.0f));
            raw[i * 2] = static_cast<png_byte>(v >> 8); // PNG 16-bit is big-endian
            raw[i * 2 + 1] = static_cast<png_byte>(v & 0xff);
        }
    }
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * rowbytes;

    std::vector<png_text> chunks(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        chunks[i] = png_text{};
        chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
        chunks[i].key = const_cast<char*>(text[i].key.c_str());
        chunks[i].text = const_cast<char*>(text[i].value.c_str());
        chunks[i].text_length = text[i].value.size();
    }

    detail::PngWriteGuard g;
    g.fp = std::fopen(path.c_str(), "wb");
    if (!g.fp) throw std::runtime_error("save_png: cannot open " + path);
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw std::runtime_error("save_png: png_create_write_struct failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw std::runtime_error("save_png: png_create_info_struct failed");

    if (setjmp(png_jmpbuf(g.png)))
        throw std::runtime_error("save_png: libpng failed writing " + path);

    png_init_io(g.png, g.fp);
    png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 bit_depth, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
    if (!chunks.empty())
        png_set_text(g.png, g.info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(g.png, g.info);
    png_write_image(g.png, rows.data());
    png_write_end(g.png, g.info);
}

inline void save_mask_png(const BinaryMask& mask, const std::string& path) {
    PlanarImage img(mask.width(), mask.height(), 1);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            img.at(x, y, 0) = mask.at(x, y) ? 1.0f : 0.0f;
    save_png(img, path, 8, {{kMaskPolarityKey, kMaskPolarityValue}});
}

/// Reads a mask written by save_mask_png (or any grayscale PNG): samples
/// > 0.5 are trusted. RGB input is rejected.
inline BinaryMask load_mask_png(const std::string& path) {
    const PlanarImage img = load_png(path);
    if (img.channels() != 1)
        throw std::runtime_error("load_mask_png: " + path + " is not grayscale");
    BinaryMask mask(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            mask.set(x, y, img.at(x, y, 0) > 0.5f);
    return mask;
}

} // namespace confmask
