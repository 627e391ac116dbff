#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/image.hpp"

namespace dupless {

enum class TissueClass { Normal = 0, Benign = 1, InSitu = 2, Invasive = 3 };

inline constexpr int kNumTissueClasses = 4;

inline constexpr std::array<TissueClass, 4> all_tissue_classes = {
    TissueClass::Normal, TissueClass::Benign, TissueClass::InSitu, TissueClass::Invasive};

inline const char* tissue_name(TissueClass c) {
    switch (c) {
        case TissueClass::Normal: return "normal";
        case TissueClass::Benign: return "benign";
        case TissueClass::InSitu: return "in-situ";
        case TissueClass::Invasive: return "invasive";
    }
    return "?";
}

inline TissueClass parse_tissue(const std::string& name) {
    for (TissueClass c : all_tissue_classes)
        if (name == tissue_name(c)) return c;
    throw DataError("unknown tissue class: " + name);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

inline void check_csv_field(const std::string& field) {
    if (field.find(',') != std::string::npos || field.find('\n') != std::string::npos)
        throw DataError("value not representable in CSV: " + field);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace detail

struct ManifestPatchRecord {
    std::string patch_id;
    int tile_row = 0;
    int tile_col = 0;
    std::string path;  // relative to the manifest file, empty if not materialized
};

struct SliceRecord {
    std::string slice_id;
    TissueClass label = TissueClass::Normal;
    std::string path;  // slice image, relative to the manifest file
    std::vector<ManifestPatchRecord> patches;  // row-major (tile_row, tile_col)
};

/**
 * @brief Single source of truth for a dataset: slice -> label -> ordered
 * patch records. Splits, aggregation order, and evaluation all key off it.
 */
struct DatasetManifest {
    std::vector<SliceRecord> slices;

    std::size_t patches_per_slice() const {
        return slices.empty() ? 0 : slices.front().patches.size();
    }

    const SliceRecord* find(const std::string& slice_id) const {
        for (const auto& s : slices)
            if (s.slice_id == slice_id) return &s;
        return nullptr;
    }

    void validate() const {
        std::unordered_set<std::string> seen;
        const std::size_t per_slice = patches_per_slice();
        for (const auto& s : slices) {
            if (!seen.insert(s.slice_id).second)
                throw DataError("duplicate slice id: " + s.slice_id);
            if (s.patches.size() != per_slice)
                throw DataError("slice " + s.slice_id + " has " +
                                std::to_string(s.patches.size()) + " patches, expected " +
                                std::to_string(per_slice));
            const int v = static_cast<int>(s.label);
            if (v < 0 || v >= kNumTissueClasses)
                throw DataError("slice " + s.slice_id + " has an invalid label");
        }
    }

    std::vector<std::string> slice_ids() const {
        std::vector<std::string> ids;
        ids.reserve(slices.size());
        for (const auto& s : slices) ids.push_back(s.slice_id);
        return ids;
    }
};

// ------------------------------------------------------------ CSV formats
//
// slices.csv:   slice_id,label,path
// patches.csv:  patch_id,slice_id,tile_row,tile_col,label,path

inline void write_slice_manifest(const DatasetManifest& manifest,
                                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "slice_id,label,path\n";
    for (const auto& s : manifest.slices) {
        detail::check_csv_field(s.slice_id);
        detail::check_csv_field(s.path);
        out << s.slice_id << "," << tissue_name(s.label) << "," << s.path << "\n";
    }
}

inline DatasetManifest read_slice_manifest(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "slice_id,label,path")
        throw DataError("bad slice manifest header: " + path.string());
    DatasetManifest manifest;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 3) throw DataError("bad slice manifest row: " + lines[i]);
        manifest.slices.push_back({f[0], parse_tissue(f[1]), f[2], {}});
    }
    manifest.validate();
    return manifest;
}

inline void write_patch_manifest(const DatasetManifest& manifest,
                                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "patch_id,slice_id,tile_row,tile_col,label,path\n";
    for (const auto& s : manifest.slices)
        for (const auto& p : s.patches) {
            detail::check_csv_field(p.patch_id);
            detail::check_csv_field(p.path);
            out << p.patch_id << "," << s.slice_id << "," << p.tile_row << "," << p.tile_col
                << "," << tissue_name(s.label) << "," << p.path << "\n";
        }
}

inline DatasetManifest read_patch_manifest(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines[0] != "patch_id,slice_id,tile_row,tile_col,label,path")
        throw DataError("bad patch manifest header: " + path.string());
    DatasetManifest manifest;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 6) throw DataError("bad patch manifest row: " + lines[i]);
        auto it = index.find(f[1]);
        if (it == index.end()) {
            index.emplace(f[1], manifest.slices.size());
            manifest.slices.push_back({f[1], parse_tissue(f[4]), "", {}});
            it = index.find(f[1]);
        }
        manifest.slices[it->second].patches.push_back(
            {f[0], std::stoi(f[2]), std::stoi(f[3]), f[5]});
    }
    // keep each slice's patches in row-major order regardless of file order
    for (auto& s : manifest.slices)
        std::sort(s.patches.begin(), s.patches.end(), [](const auto& a, const auto& b) {
            return std::pair(a.tile_row, a.tile_col) < std::pair(b.tile_row, b.tile_col);
        });
    manifest.validate();
    return manifest;
}

}  // namespace dupless
