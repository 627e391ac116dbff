#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/image.hpp"
#include "dupless/manifest.hpp"
#include "dupless/textio.hpp"

namespace dupless {

static_assert(std::endian::native == std::endian::little,
              "embedding serialization assumes a little-endian host");

struct EmbeddingVector {
    std::size_t dim = 0;
    std::vector<float> values;
    std::string patch_id;

    void validate() const {
        if (values.size() != dim)
            throw DimMismatch("embedding for " + patch_id + " has " +
                              std::to_string(values.size()) + " values, declared dim " +
                              std::to_string(dim));
        for (float v : values)
            if (!std::isfinite(v)) throw DataError("non-finite embedding value in " + patch_id);
    }
};

enum class AggregationMethod { Concat, Sum };

inline const char* aggregation_name(AggregationMethod m) {
    return m == AggregationMethod::Concat ? "concat" : "sum";
}

inline AggregationMethod parse_aggregation(const std::string& s) {
    if (s == "concat") return AggregationMethod::Concat;
    if (s == "sum") return AggregationMethod::Sum;
    throw UsageError("unknown aggregation method: " + s);
}

struct SliceEmbedding {
    std::string slice_id;
    AggregationMethod method = AggregationMethod::Concat;
    std::vector<float> values;
};

namespace detail {

inline std::string common_slice_id(const std::vector<EmbeddingVector>& patches) {
    const std::string slice_id = parse_patch_id(patches.front().patch_id).slice_id;
    for (const auto& p : patches)
        if (parse_patch_id(p.patch_id).slice_id != slice_id)
            throw DataError("aggregation input mixes slices: " + patches.front().patch_id +
                            " vs " + p.patch_id);
    return slice_id;
}

inline std::size_t common_dim(const std::vector<EmbeddingVector>& patches) {
    if (patches.empty()) throw EmptyList("aggregation input is empty");
    const std::size_t dim = patches.front().dim;
    for (const auto& p : patches) {
        p.validate();
        if (p.dim != dim)
            throw DimMismatch("embedding dim " + std::to_string(p.dim) + " for " + p.patch_id +
                              " differs from " + std::to_string(dim));
    }
    return dim;
}

}  // namespace detail

/// Order-sensitive: callers must pass patches in the global row-major patch
/// order so slice vectors are comparable across slices.
inline SliceEmbedding concat_embeddings(const std::vector<EmbeddingVector>& patches) {
    const std::size_t dim = detail::common_dim(patches);
    SliceEmbedding out;
    out.slice_id = detail::common_slice_id(patches);
    out.method = AggregationMethod::Concat;
    out.values.reserve(patches.size() * dim);
    for (const auto& p : patches) out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    return out;
}

/// Order-invariant: patches are accumulated in sorted patch-id order, so any
/// permutation of the same set sums to bit-identical values.
inline SliceEmbedding sum_embeddings(const std::vector<EmbeddingVector>& patches) {
    const std::size_t dim = detail::common_dim(patches);
    SliceEmbedding out;
    out.slice_id = detail::common_slice_id(patches);
    out.method = AggregationMethod::Sum;

    std::vector<const EmbeddingVector*> ordered;
    ordered.reserve(patches.size());
    for (const auto& p : patches) ordered.push_back(&p);
    std::sort(ordered.begin(), ordered.end(),
              [](const EmbeddingVector* a, const EmbeddingVector* b) {
                  return a->patch_id < b->patch_id;
              });

    out.values.assign(dim, 0.0f);
    for (const EmbeddingVector* p : ordered)
        for (std::size_t i = 0; i < dim; ++i) out.values[i] += p->values[i];
    return out;
}

/// Per-feature z-scoring, fit on the training split only. Defaults off in
/// every pipeline path; provided for experiments with raw imported features.
struct Standardizer {
    std::vector<float> mean;
    std::vector<float> stdev;

    void fit(const std::vector<std::vector<float>>& rows) {
        if (rows.empty()) throw EmptyList("standardizer fit on empty input");
        const std::size_t d = rows.front().size();
        mean.assign(d, 0.0f);
        stdev.assign(d, 0.0f);
        for (const auto& r : rows) {
            if (r.size() != d) throw DimMismatch("standardizer fit rows differ in length");
            for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
        }
        for (float& m : mean) m /= static_cast<float>(rows.size());
        for (const auto& r : rows)
            for (std::size_t i = 0; i < d; ++i) {
                const float dlt = r[i] - mean[i];
                stdev[i] += dlt * dlt;
            }
        for (float& s : stdev) {
            s = std::sqrt(s / static_cast<float>(rows.size()));
            if (s < 1e-12f) s = 1.0f;
        }
    }

    std::vector<float> apply(const std::vector<float>& row) const {
        if (row.size() != mean.size()) throw DimMismatch("standardizer input length mismatch");
        std::vector<float> out(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean[i]) / stdev[i];
        return out;
    }
};

// ------------------------------------------------------------------- EMB1
//
// Binary layout: "EMB1", u32 LE count, u32 LE dim, count*dim LE f32.
// A sidecar CSV `row,patch_id` (exactly `count` data rows) carries the ids.
// A plain CSV alternative `patch_id,v0,v1,...` is accepted on import.

inline std::filesystem::path emb1_sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".index.csv");
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw TruncatedFile(std::string("short read in ") + what);
    return v;
}

}  // namespace detail

inline void export_embeddings(const std::vector<EmbeddingVector>& vecs,
                              const std::filesystem::path& path) {
    std::size_t dim = 0;
    if (!vecs.empty()) {
        dim = vecs.front().dim;
        for (const auto& v : vecs) {
            v.validate();
            if (v.dim != dim) throw DimMismatch("export with mixed dims");
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write("EMB1", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(vecs.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(dim));
    for (const auto& v : vecs)
        out.write(reinterpret_cast<const char*>(v.values.data()),
                  static_cast<std::streamsize>(v.values.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());

    std::ofstream idx(emb1_sidecar_path(path));
    if (!idx) throw IoError("cannot open for writing: " + emb1_sidecar_path(path).string());
    idx << "row,patch_id\n";
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        detail::check_csv_field(vecs[i].patch_id);
        idx << i << "," << vecs[i].patch_id << "\n";
    }
}

inline std::vector<EmbeddingVector> import_embeddings_emb1(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "EMB1", 4) != 0)
        throw BadMagic("not an EMB1 file: " + path.string());
    const std::uint32_t count = detail::get_u32(in, "EMB1 count");
    const std::uint32_t dim = detail::get_u32(in, "EMB1 dim");

    std::vector<EmbeddingVector> vecs(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        vecs[i].dim = dim;
        vecs[i].values.resize(dim);
        in.read(reinterpret_cast<char*>(vecs[i].values.data()),
                static_cast<std::streamsize>(dim * sizeof(float)));
        if (!in) throw TruncatedFile("EMB1 payload ends early: " + path.string());
    }

    const auto sidecar = emb1_sidecar_path(path);
    const auto lines = detail::read_lines(sidecar);
    if (lines.empty() || lines[0] != "row,patch_id")
        throw IndexMismatch("bad sidecar header: " + sidecar.string());
    if (lines.size() - 1 != count)
        throw IndexMismatch("sidecar has " + std::to_string(lines.size() - 1) + " rows, EMB1 has " +
                            std::to_string(count));
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = detail::split_csv_line(lines[i]);
        if (f.size() != 2 || f[0] != std::to_string(i - 1))
            throw IndexMismatch("bad sidecar row: " + lines[i]);
        vecs[i - 1].patch_id = f[1];
    }
    return vecs;
}

inline std::vector<EmbeddingVector> import_embeddings_csv(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    std::vector<EmbeddingVector> vecs;
    std::size_t dim = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto f = detail::split_csv_line(lines[i]);
        if (i == 0 && !f.empty() && f[0] == "patch_id") continue;  // optional header
        if (f.size() < 2) throw DataError("bad embedding CSV row: " + lines[i]);
        EmbeddingVector v;
        v.patch_id = f[0];
        v.dim = f.size() - 1;
        if (vecs.empty())
            dim = v.dim;
        else if (v.dim != dim)
            throw DimMismatch("embedding CSV rows differ in dim: " + lines[i]);
        v.values.reserve(v.dim);
        for (std::size_t j = 1; j < f.size(); ++j)
            v.values.push_back(static_cast<float>(parse_double(f[j])));
        v.validate();
        vecs.push_back(std::move(v));
    }
    return vecs;
}

/// Dispatches on extension: ".csv" is the plain-text form, everything else
/// is EMB1 with its sidecar index.
inline std::vector<EmbeddingVector> import_embeddings(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return import_embeddings_csv(path);
    return import_embeddings_emb1(path);
}

}  // namespace dupless
