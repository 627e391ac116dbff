#pragma once

#include <png.h>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/image.hpp"

namespace dupless {

// ---------------------------------------------------------------- PPM (P6)

inline void write_ppm(const RasterImage& image, const std::filesystem::path& path) {
    image.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("short write: " + path.string());
}

namespace detail {

inline int ppm_next_token(std::istream& in, std::string& token) {
    token.clear();
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {  // comment runs to end of line
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        token.push_back(static_cast<char>(c));
        c = in.get();
    }
    return token.empty() ? EOF : 0;
}

}  // namespace detail

inline RasterImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '6')
        throw BadMagic("not a P6 PPM: " + path.string());
    std::string token;
    if (detail::ppm_next_token(in, token) == EOF) throw TruncatedFile(path.string());
    const int width = std::stoi(token);
    if (detail::ppm_next_token(in, token) == EOF) throw TruncatedFile(path.string());
    const int height = std::stoi(token);
    if (detail::ppm_next_token(in, token) == EOF) throw TruncatedFile(path.string());
    if (std::stoi(token) != 255)
        throw DataError("unsupported PPM maxval (want 255): " + path.string());
    // header ends with exactly one whitespace byte, already consumed by the
    // token reader's trailing get()
    RasterImage image(width, height);
    in.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size()))
        throw TruncatedFile("pixel payload short: " + path.string());
    return image;
}

// ---------------------------------------------------------------- PNG

namespace detail {

struct PngReadHandle {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* file = nullptr;
    ~PngReadHandle() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (file) std::fclose(file);
    }
};

struct PngWriteHandle {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* file = nullptr;
    ~PngWriteHandle() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (file) std::fclose(file);
    }
};

}  // namespace detail

/// Reads any 8/16-bit PNG and normalizes it to 8-bit RGB.
inline RasterImage read_png(const std::filesystem::path& path) {
    detail::PngReadHandle h;
    h.file = std::fopen(path.string().c_str(), "rb");
    if (!h.file) throw IoError("cannot open: " + path.string());

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, h.file) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw BadMagic("not a PNG: " + path.string());

    h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!h.png) throw IoError("png_create_read_struct failed");
    h.info = png_create_info_struct(h.png);
    if (!h.info) throw IoError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(h.png))) throw DataError("libpng failed to decode: " + path.string());

    png_init_io(h.png, h.file);
    png_set_sig_bytes(h.png, 8);
    png_read_info(h.png, h.info);

    png_set_palette_to_rgb(h.png);
    png_set_expand_gray_1_2_4_to_8(h.png);
    png_set_strip_16(h.png);
    png_set_strip_alpha(h.png);
    if (png_get_color_type(h.png, h.info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(h.png, h.info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(h.png);
    png_read_update_info(h.png, h.info);

    const int width = static_cast<int>(png_get_image_width(h.png, h.info));
    const int height = static_cast<int>(png_get_image_height(h.png, h.info));
    if (png_get_channels(h.png, h.info) != 3)
        throw DataError("PNG did not normalize to RGB: " + path.string());

    RasterImage image(width, height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = &image.pixels[image.index(0, y)];
    png_read_image(h.png, rows.data());
    png_read_end(h.png, nullptr);
    return image;
}

inline void write_png(const RasterImage& image, const std::filesystem::path& path) {
    image.validate();
    detail::PngWriteHandle h;
    h.file = std::fopen(path.string().c_str(), "wb");
    if (!h.file) throw IoError("cannot open for writing: " + path.string());

    h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!h.png) throw IoError("png_create_write_struct failed");
    h.info = png_create_info_struct(h.png);
    if (!h.info) throw IoError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(h.png))) throw IoError("libpng failed to encode: " + path.string());

    png_init_io(h.png, h.file);
    png_set_IHDR(h.png, h.info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(h.png, h.info);
    for (int y = 0; y < image.height; ++y)
        png_write_row(h.png, const_cast<png_bytep>(&image.pixels[image.index(0, y)]));
    png_write_end(h.png, nullptr);
}

// ---------------------------------------------------------------- dispatch

inline RasterImage read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm") return read_ppm(path);
    // fall back to content sniffing
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char c0 = 0;
    in.get(c0);
    in.close();
    return c0 == 'P' ? read_ppm(path) : read_png(path);
}

inline void write_image(const RasterImage& image, const std::filesystem::path& path) {
    if (path.extension() == ".png")
        write_png(image, path);
    else
        write_ppm(image, path);
}

}  // namespace dupless
