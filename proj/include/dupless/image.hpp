#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dupless/errors.hpp"

namespace dupless {

/**
 * @brief Dense 8-bit RGB raster, row-major with interleaved channels.
 *
 * Index formula: pixel (x, y) channel c lives at (y * width + x) * 3 + c.
 * Transforms in this library operate directly on the 8-bit samples so that
 * duplication checks stay bit-exact; conversion to floating point happens
 * only at the network boundary.
 */
struct RasterImage {
    static constexpr int channels = 3;

    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    RasterImage() = default;

    RasterImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h),
          pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels, fill) {
        validate();
    }

    RasterImage(int w, int h, std::vector<std::uint8_t> data)
        : width(w), height(h), pixels(std::move(data)) {
        validate();
    }

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)) * channels + static_cast<std::size_t>(c);
    }

    std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
    void set(int x, int y, int c, std::uint8_t v) { pixels[index(x, y, c)] = v; }

    void validate() const {
        if (width < 2 || height < 2)
            throw DimensionMismatch("raster must be at least 2x2, got " + std::to_string(width) +
                                    "x" + std::to_string(height));
        const std::size_t expected =
            static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels;
        if (pixels.size() != expected)
            throw DimensionMismatch("pixel buffer size " + std::to_string(pixels.size()) +
                                    " does not match " + std::to_string(expected));
    }
};

struct PatchOrigin {
    std::string slice_id;
    int tile_row = 0;
    int tile_col = 0;
};

/// "<slice_id>#r<tile_row>c<tile_col>"
inline std::string make_patch_id(const std::string& slice_id, int tile_row, int tile_col) {
    return slice_id + "#r" + std::to_string(tile_row) + "c" + std::to_string(tile_col);
}

inline PatchOrigin parse_patch_id(const std::string& patch_id) {
    const auto hash = patch_id.rfind("#r");
    if (hash == std::string::npos) throw DataError("malformed patch id: " + patch_id);
    const auto c = patch_id.find('c', hash + 2);
    if (c == std::string::npos) throw DataError("malformed patch id: " + patch_id);
    PatchOrigin origin;
    origin.slice_id = patch_id.substr(0, hash);
    origin.tile_row = std::stoi(patch_id.substr(hash + 2, c - hash - 2));
    origin.tile_col = std::stoi(patch_id.substr(c + 1));
    return origin;
}

/**
 * @brief Square tile cut from a slice; the unit fed to feature extractors.
 *
 * The side must be even (and at least 4) so the patch splits exactly into a
 * 2x2 grid of quadrants that are themselves valid rasters.
 */
struct PatchImage {
    int side = 0;
    std::vector<std::uint8_t> pixels;  // layout as RasterImage
    PatchOrigin origin;

    PatchImage() = default;

    PatchImage(int side_px, std::vector<std::uint8_t> data, PatchOrigin orig)
        : side(side_px), pixels(std::move(data)), origin(std::move(orig)) {
        validate();
    }

    PatchImage(int side_px, std::uint8_t fill, PatchOrigin orig = {})
        : side(side_px),
          pixels(static_cast<std::size_t>(side_px) * static_cast<std::size_t>(side_px) *
                     RasterImage::channels,
                 fill),
          origin(std::move(orig)) {
        validate();
    }

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(side) +
                static_cast<std::size_t>(x)) * RasterImage::channels + static_cast<std::size_t>(c);
    }

    std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
    void set(int x, int y, int c, std::uint8_t v) { pixels[index(x, y, c)] = v; }

    std::string id() const { return make_patch_id(origin.slice_id, origin.tile_row, origin.tile_col); }

    RasterImage to_raster() const { return RasterImage(side, side, pixels); }

    void validate() const {
        if (side < 4 || side % 2 != 0)
            throw OddPatchSide("patch side must be even and >= 4, got " + std::to_string(side));
        const std::size_t expected = static_cast<std::size_t>(side) *
                                     static_cast<std::size_t>(side) * RasterImage::channels;
        if (pixels.size() != expected)
            throw DimensionMismatch("patch buffer size " + std::to_string(pixels.size()) +
                                    " does not match " + std::to_string(expected));
    }
};

enum class Quadrant { TopLeft = 0, TopRight = 1, BottomLeft = 2, BottomRight = 3 };

inline constexpr std::array<Quadrant, 4> all_quadrants = {
    Quadrant::TopLeft, Quadrant::TopRight, Quadrant::BottomLeft, Quadrant::BottomRight};

inline const char* quadrant_name(Quadrant q) {
    switch (q) {
        case Quadrant::TopLeft: return "top-left";
        case Quadrant::TopRight: return "top-right";
        case Quadrant::BottomLeft: return "bottom-left";
        case Quadrant::BottomRight: return "bottom-right";
    }
    return "?";
}

/// Pixel offset of a quadrant's top-left corner within a patch of side `side`.
inline std::pair<int, int> quadrant_offset(Quadrant q, int side) {
    const int half = side / 2;
    const int x0 = (q == Quadrant::TopRight || q == Quadrant::BottomRight) ? half : 0;
    const int y0 = (q == Quadrant::BottomLeft || q == Quadrant::BottomRight) ? half : 0;
    return {x0, y0};
}

/**
 * @brief Cuts a slice into non-overlapping square patches.
 *
 * Patches are emitted in row-major (tile_row, tile_col) order; this order is
 * fixed globally and every downstream aggregation relies on it. Residual
 * border pixels on the right/bottom are discarded when the slice dimensions
 * are not multiples of the patch side.
 */
inline std::vector<PatchImage> tile_slice(const RasterImage& image, int patch_side,
                                          const std::string& slice_id) {
    image.validate();
    if (patch_side % 2 != 0)
        throw OddPatchSide("patch side must be even, got " + std::to_string(patch_side));
    if (patch_side > image.width || patch_side > image.height)
        throw PatchTooLarge("patch side " + std::to_string(patch_side) + " exceeds slice " +
                            std::to_string(image.width) + "x" + std::to_string(image.height));

    const int rows = image.height / patch_side;
    const int cols = image.width / patch_side;
    std::vector<PatchImage> patches;
    patches.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));

    const std::size_t row_bytes = static_cast<std::size_t>(patch_side) * RasterImage::channels;
    for (int tr = 0; tr < rows; ++tr) {
        for (int tc = 0; tc < cols; ++tc) {
            std::vector<std::uint8_t> data(row_bytes * static_cast<std::size_t>(patch_side));
            for (int y = 0; y < patch_side; ++y) {
                const std::size_t src = image.index(tc * patch_side, tr * patch_side + y);
                std::memcpy(&data[static_cast<std::size_t>(y) * row_bytes], &image.pixels[src],
                            row_bytes);
            }
            patches.emplace_back(patch_side, std::move(data), PatchOrigin{slice_id, tr, tc});
        }
    }
    return patches;
}

/// Returns the (side/2)^2 sub-raster at the named corner.
inline RasterImage extract_quadrant(const PatchImage& patch, Quadrant q) {
    patch.validate();
    const int half = patch.side / 2;
    const auto [x0, y0] = quadrant_offset(q, patch.side);
    RasterImage out(half, half);
    const std::size_t row_bytes = static_cast<std::size_t>(half) * RasterImage::channels;
    for (int y = 0; y < half; ++y)
        std::memcpy(&out.pixels[out.index(0, y)], &patch.pixels[patch.index(x0, y0 + y)], row_bytes);
    return out;
}

/// Returns a new patch with the named quadrant overwritten by `data`; the
/// other three quadrants are bit-identical to the input.
inline PatchImage write_quadrant(const PatchImage& patch, Quadrant q, const RasterImage& data) {
    patch.validate();
    const int half = patch.side / 2;
    if (data.width != half || data.height != half)
        throw DimensionMismatch("quadrant data is " + std::to_string(data.width) + "x" +
                                std::to_string(data.height) + ", expected " + std::to_string(half) +
                                "x" + std::to_string(half));
    PatchImage out = patch;
    const auto [x0, y0] = quadrant_offset(q, patch.side);
    const std::size_t row_bytes = static_cast<std::size_t>(half) * RasterImage::channels;
    for (int y = 0; y < half; ++y)
        std::memcpy(&out.pixels[out.index(x0, y0 + y)], &data.pixels[data.index(0, y)], row_bytes);
    return out;
}

}  // namespace dupless
