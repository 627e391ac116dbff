#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/image.hpp"
#include "dupless/manifest.hpp"
#include "dupless/rng.hpp"

namespace dupless {

/**
 * @brief The seven-valued pretext label: identity plus the six quadrant
 * duplication geometries of the 2x2 grid.
 */
enum class DuplicationClass {
    Normal = 0,
    TopHorizontal = 1,
    BottomHorizontal = 2,
    LeftVertical = 3,
    RightVertical = 4,
    Diagonal = 5,
    OffDiagonal = 6,
};

inline constexpr int kNumDuplicationClasses = 7;

inline constexpr std::array<DuplicationClass, 7> all_duplication_classes = {
    DuplicationClass::Normal,        DuplicationClass::TopHorizontal,
    DuplicationClass::BottomHorizontal, DuplicationClass::LeftVertical,
    DuplicationClass::RightVertical, DuplicationClass::Diagonal,
    DuplicationClass::OffDiagonal,
};

inline const char* duplication_name(DuplicationClass c) {
    switch (c) {
        case DuplicationClass::Normal: return "normal";
        case DuplicationClass::TopHorizontal: return "top-horizontal";
        case DuplicationClass::BottomHorizontal: return "bottom-horizontal";
        case DuplicationClass::LeftVertical: return "left-vertical";
        case DuplicationClass::RightVertical: return "right-vertical";
        case DuplicationClass::Diagonal: return "diagonal";
        case DuplicationClass::OffDiagonal: return "off-diagonal";
    }
    return "?";
}

struct QuadrantCopy {
    Quadrant source;
    Quadrant target;
};

/// Source -> target quadrant for each non-Normal class, indexed by class - 1.
/// Every duplication copies from the top row or left column outward; flipping
/// any single direction is a one-line change here.
inline constexpr std::array<QuadrantCopy, 6> kDuplicationMoves = {{
    {Quadrant::TopLeft, Quadrant::TopRight},      // TopHorizontal
    {Quadrant::BottomLeft, Quadrant::BottomRight},  // BottomHorizontal
    {Quadrant::TopLeft, Quadrant::BottomLeft},    // LeftVertical
    {Quadrant::TopRight, Quadrant::BottomRight},  // RightVertical
    {Quadrant::TopLeft, Quadrant::BottomRight},   // Diagonal
    {Quadrant::TopRight, Quadrant::BottomLeft},   // OffDiagonal
}};

inline QuadrantCopy duplication_move(DuplicationClass c) {
    const int v = static_cast<int>(c);
    if (v < 1 || v > 6) throw DataError("class has no quadrant move: " + std::to_string(v));
    return kDuplicationMoves[static_cast<std::size_t>(v - 1)];
}

/// Applies one duplication geometry. Normal is the identity; otherwise the
/// source quadrant is copied over the target and the remaining two quadrants
/// are untouched.
inline PatchImage apply_duplication(const PatchImage& patch, DuplicationClass c) {
    if (c == DuplicationClass::Normal) return patch;
    const QuadrantCopy move = duplication_move(c);
    return write_quadrant(patch, move.target, extract_quadrant(patch, move.source));
}

struct PretextExample {
    PatchImage patch;
    DuplicationClass label = DuplicationClass::Normal;
    std::string source_patch_id;
};

/// One patch becomes seven examples, one per class in enum order; element 0
/// is the untouched patch.
inline std::vector<PretextExample> generate_pretext_examples(const PatchImage& patch) {
    std::vector<PretextExample> examples;
    examples.reserve(kNumDuplicationClasses);
    const std::string source_id = patch.id();
    for (DuplicationClass c : all_duplication_classes)
        examples.push_back({apply_duplication(patch, c), c, source_id});
    return examples;
}

struct PretextSampling {
    double fraction = 0.15;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(fraction > 0.0) || fraction > 1.0)
            throw DataError("pretext fraction must be in (0, 1], got " + std::to_string(fraction));
    }
};

/**
 * @brief Draws ceil(fraction * slice_count) slice ids uniformly without
 * replacement, ignoring tissue labels. Deterministic in (manifest, seed,
 * fraction); the result is sorted by slice id.
 *
 * When `pool` is non-null only those slice ids are eligible, which is how the
 * pipeline restricts pretext data to the training split.
 */
inline std::vector<std::string> sample_pretext_slices(
    const DatasetManifest& manifest, const PretextSampling& sampling,
    const std::vector<std::string>* pool = nullptr) {
    sampling.validate();
    std::vector<std::string> ids = pool ? *pool : manifest.slice_ids();
    if (ids.empty()) throw EmptyManifest("no slices to sample from");
    std::sort(ids.begin(), ids.end());

    const auto count =
        static_cast<std::size_t>(std::ceil(sampling.fraction * static_cast<double>(ids.size())));
    Rng rng(sampling.seed);
    rng.shuffle(ids);
    ids.resize(std::min(count, ids.size()));
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ------------------------------------------------------------ dataset files
//
// pretext.csv: example_id,source_patch_id,label   (label = integer class 0-6)
// example images are stored as "<source_patch_id>__d<label>" + extension

inline std::string pretext_example_name(const std::string& source_patch_id, DuplicationClass c) {
    return source_patch_id + "__d" + std::to_string(static_cast<int>(c));
}

struct PretextManifestRow {
    std::string example_id;
    std::string source_patch_id;
    DuplicationClass label = DuplicationClass::Normal;
    std::string path;  // optional extra column, relative to the manifest
};

inline void write_pretext_manifest(const std::vector<PretextManifestRow>& rows,
                                   const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "example_id,source_patch_id,label\n";
    for (const auto& r : rows) {
        detail::check_csv_field(r.example_id);
        detail::check_csv_field(r.source_patch_id);
        out << r.example_id << "," << r.source_patch_id << "," << static_cast<int>(r.label)
            << "\n";
    }
}

inline std::vector<PretextManifestRow> read_pretext_manifest(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "example_id,source_patch_id,label")
        throw DataError("bad pretext manifest header: " + path.string());
    std::vector<PretextManifestRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 3) throw DataError("bad pretext manifest row: " + lines[i]);
        const int label = std::stoi(f[2]);
        if (label < 0 || label >= kNumDuplicationClasses)
            throw LabelOutOfRange("pretext label out of range: " + f[2]);
        rows.push_back({f[0], f[1], static_cast<DuplicationClass>(label), ""});
    }
    return rows;
}

}  // namespace dupless
