#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/image.hpp"
#include "dupless/image_io.hpp"
#include "dupless/manifest.hpp"
#include "dupless/parallel.hpp"
#include "dupless/rng.hpp"

namespace dupless {

/// Appearance of one tissue class: nucleus-like blob density, size range and
/// the background/foreground color pair. Densities and tints are spaced so
/// class statistics differ by a clear margin while textures stay non-trivial.
struct ClassStyle {
    double blobs_per_kpx = 1.0;  // expected blob count per 1000 pixels
    double radius_min = 3.0;
    double radius_max = 6.0;
    std::array<std::uint8_t, 3> background{230, 225, 232};
    std::array<std::uint8_t, 3> foreground{120, 90, 150};
};

inline std::array<ClassStyle, kNumTissueClasses> default_class_styles() {
    return {{
        {0.9, 3.5, 6.5, {236, 224, 232}, {150, 108, 162}},   // normal
        {1.4, 4.5, 8.5, {228, 210, 221}, {122, 82, 142}},    // benign
        {2.1, 3.0, 7.0, {219, 198, 212}, {100, 62, 122}},    // in-situ
        {3.0, 2.5, 5.5, {209, 186, 203}, {80, 44, 102}},     // invasive
    }};
}

/**
 * @brief Synthetic dataset shape. The defaults give 80 slices of 512x384
 * that tile into 12 patches of 128 each, mirroring the full-scale 12-patch
 * grid at a fraction of the pixels.
 *
 * gradient_x/gradient_y tilt the blob density across the slice (relative
 * slope over the full width/height), so tissue texture drifts across the
 * slice the way staining density drifts across real sections.
 *
 * shade_x/shade_y/shade_saddle set the swing (in 8-bit intensity levels) of
 * a tile-periodic illumination field with period patch_side, mimicking the
 * per-tile vignetting of tile-scanning microscopes. The field is zero-mean
 * over each aligned patch, so per-patch average color (the main tissue-class
 * cue) is untouched. It matters for the pretext task: each quadrant of an
 * aligned patch sits in a fixed, distinct corner of the shading field, so
 * copying one quadrant over another shifts pooled channel statistics with a
 * signature unique to each of the seven duplication classes and leaves a
 * sharp illumination seam along the pasted border.
 */
struct SynthConfig {
    std::size_t slices_per_class = 20;
    std::size_t slice_width = 512;
    std::size_t slice_height = 384;
    std::size_t patch_side = 128;
    std::uint64_t seed = 0;
    double gradient_x = 1.2;
    double gradient_y = 0.7;
    double shade_x = 30.0;
    double shade_y = 30.0;
    double shade_saddle = 24.0;
    std::array<ClassStyle, kNumTissueClasses> styles = default_class_styles();
    std::string image_ext = ".png";

    void validate() const {
        if (slices_per_class < 1) throw UsageError("slices_per_class must be >= 1");
        if (slice_width < patch_side || slice_height < patch_side)
            throw UsageError("slice dims must fit at least one patch");
        if (patch_side < 4 || patch_side % 2 != 0)
            throw UsageError("patch_side must be even and >= 4");
        if (std::abs(gradient_x) + std::abs(gradient_y) >= 2.0)
            throw UsageError("density gradients too steep: |gx| + |gy| must be < 2");
        for (double a : {shade_x, shade_y, shade_saddle})
            if (!(a >= 0.0) || a > 120.0)
                throw UsageError("shade amplitudes must be within [0, 120]");
        for (const auto& s : styles) {
            if (!(s.blobs_per_kpx > 0.0)) throw UsageError("blob density must be > 0");
            if (!(s.radius_min >= 1.0) || !(s.radius_max >= s.radius_min))
                throw UsageError("bad blob radius range");
        }
        if (image_ext != ".png" && image_ext != ".ppm")
            throw UsageError("image_ext must be .png or .ppm");
    }

    std::size_t patches_per_slice() const {
        return (slice_width / patch_side) * (slice_height / patch_side);
    }
};

namespace detail {

/// Relative blob density at a point; linear ramp around 1 at the center.
inline double density_ramp(const SynthConfig& cfg, double x, double y) {
    const double m = 1.0 +
                     cfg.gradient_x * (x / static_cast<double>(cfg.slice_width) - 0.5) +
                     cfg.gradient_y * (y / static_cast<double>(cfg.slice_height) - 0.5);
    return std::max(m, 0.05);
}

/// Position-keyed noise in [-3, 3], independent of blob draw order.
inline int pixel_noise(std::uint64_t slice_seed, std::size_t x, std::size_t y, std::size_t c) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(y) << 32) ^ (static_cast<std::uint64_t>(x) << 8) ^ c;
    const std::uint64_t h = splitmix64_scramble(slice_seed ^ splitmix64_scramble(key));
    return static_cast<int>(h % 7) - 3;
}

/// Tile-periodic illumination offset per channel: an x ramp in red, a saddle
/// in green and a y ramp in blue, each with period patch_side and zero mean
/// over one tile. u and v are the pixel's fractional position in its tile.
inline std::array<double, 3> tile_shading(const SynthConfig& cfg, std::size_t x, std::size_t y) {
    const double P = static_cast<double>(cfg.patch_side);
    const double u = (static_cast<double>(x % cfg.patch_side) + 0.5) / P;
    const double v = (static_cast<double>(y % cfg.patch_side) + 0.5) / P;
    return {cfg.shade_x * (u - 0.5),
            cfg.shade_saddle * (2.0 * u - 1.0) * (2.0 * v - 1.0),
            cfg.shade_y * (v - 0.5)};
}

inline std::uint8_t clamp_channel(int v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0, 255));
}

}  // namespace detail

/// Renders one slice: tinted background, density-ramped elliptical blobs,
/// tile-periodic illumination shading over everything, then per-pixel noise
/// so no two regions are ever bit-identical.
inline RasterImage render_slice(const SynthConfig& cfg, TissueClass label,
                                std::uint64_t slice_seed) {
    const ClassStyle& style = cfg.styles[static_cast<std::size_t>(label)];
    const std::size_t W = cfg.slice_width, H = cfg.slice_height;
    RasterImage img(static_cast<int>(W), static_cast<int>(H));
    for (std::size_t i = 0; i < W * H; ++i)
        for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = style.background[c];

    Rng rng(slice_seed);
    const auto n_blobs = static_cast<std::size_t>(
        std::llround(style.blobs_per_kpx * static_cast<double>(W * H) / 1000.0));
    const double ramp_max = 1.0 + 0.5 * (std::abs(cfg.gradient_x) + std::abs(cfg.gradient_y));

    for (std::size_t b = 0; b < n_blobs; ++b) {
        double cx = 0.0, cy = 0.0;
        for (;;) {  // rejection sampling against the density ramp
            cx = rng.uniform(0.0, static_cast<double>(W));
            cy = rng.uniform(0.0, static_cast<double>(H));
            if (rng.uniform() * ramp_max <= detail::density_ramp(cfg, cx, cy)) break;
        }
        const double rx = rng.uniform(style.radius_min, style.radius_max);
        const double ry = rng.uniform(style.radius_min, style.radius_max);
        std::array<std::uint8_t, 3> color;
        for (std::size_t c = 0; c < 3; ++c)
            color[c] = detail::clamp_channel(static_cast<int>(style.foreground[c]) +
                                             static_cast<int>(rng.uniform_int(-12, 12)));

        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - ry)));
        const auto y1 = std::min(H, static_cast<std::size_t>(std::max(0.0, std::ceil(cy + ry) + 1)));
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - rx)));
        const auto x1 = std::min(W, static_cast<std::size_t>(std::max(0.0, std::ceil(cx + rx) + 1)));
        for (std::size_t y = y0; y < y1; ++y) {
            const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
            for (std::size_t x = x0; x < x1; ++x) {
                const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                if (dx * dx + dy * dy <= 1.0) {
                    std::uint8_t* px = img.pixels.data() + (y * W + x) * 3;
                    px[0] = color[0];
                    px[1] = color[1];
                    px[2] = color[2];
                }
            }
        }
    }

    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::array<double, 3> shade = detail::tile_shading(cfg, x, y);
            for (std::size_t c = 0; c < 3; ++c) {
                std::uint8_t& px = img.pixels[(y * W + x) * 3 + c];
                px = detail::clamp_channel(static_cast<int>(px) +
                                           static_cast<int>(std::lround(shade[c])) +
                                           detail::pixel_noise(slice_seed, x, y, c));
            }
        }
    return img;
}

inline std::string synth_slice_id(TissueClass label, std::size_t index) {
    std::string n = std::to_string(index);
    while (n.size() < 3) n.insert(n.begin(), '0');
    return std::string(tissue_name(label)) + "_" + n;
}

/**
 * @brief Writes the slice images and the `slices.csv` manifest under
 * `out_dir`. Each slice draws from its own seed derived from (seed, global
 * ordinal), so generation is identical for any thread count.
 */
inline DatasetManifest generate_dataset(const SynthConfig& cfg,
                                        const std::filesystem::path& out_dir, int threads = 1) {
    cfg.validate();
    const auto slice_dir = out_dir / "slices";
    std::filesystem::create_directories(slice_dir);

    DatasetManifest manifest;
    for (TissueClass label : all_tissue_classes)
        for (std::size_t i = 0; i < cfg.slices_per_class; ++i) {
            SliceRecord rec;
            rec.slice_id = synth_slice_id(label, i);
            rec.label = label;
            rec.path = "slices/" + rec.slice_id + cfg.image_ext;
            manifest.slices.push_back(std::move(rec));
        }

    parallel_for(manifest.slices.size(), threads, [&](std::size_t ordinal) {
        const SliceRecord& rec = manifest.slices[ordinal];
        const RasterImage img = render_slice(cfg, rec.label, derive_seed(cfg.seed, ordinal));
        write_image(img, out_dir / rec.path);
    });

    manifest.validate();
    write_slice_manifest(manifest, out_dir / "slices.csv");
    return manifest;
}

}  // namespace dupless
