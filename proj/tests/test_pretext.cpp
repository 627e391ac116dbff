#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dupless/manifest.hpp"
#include "dupless/pretext.hpp"
#include "dupless/rng.hpp"

using namespace dupless;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dupless_test_pretext";
    std::filesystem::create_directories(dir);
    return dir / name;
}

PatchImage random_patch(int side, Rng& rng) {
    std::vector<std::uint8_t> data(static_cast<std::size_t>(side) * side * 3);
    for (auto& px : data) px = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return PatchImage(side, std::move(data), PatchOrigin{"rnd", 0, 0});
}

DatasetManifest fake_manifest(std::size_t slices, std::size_t patches_per_slice) {
    DatasetManifest m;
    for (std::size_t s = 0; s < slices; ++s) {
        SliceRecord rec;
        rec.slice_id = "s" + std::to_string(1000 + s);
        rec.label = static_cast<TissueClass>(s % kNumTissueClasses);
        rec.path = rec.slice_id + ".png";
        for (std::size_t p = 0; p < patches_per_slice; ++p)
            rec.patches.push_back({make_patch_id(rec.slice_id, static_cast<int>(p), 0),
                                   static_cast<int>(p), 0, ""});
        m.slices.push_back(std::move(rec));
    }
    return m;
}

}  // namespace

TEST_CASE("duplication moves copy the documented quadrant pairs", "[pretext]") {
    using Q = Quadrant;
    CHECK(duplication_move(DuplicationClass::TopHorizontal).source == Q::TopLeft);
    CHECK(duplication_move(DuplicationClass::TopHorizontal).target == Q::TopRight);
    CHECK(duplication_move(DuplicationClass::BottomHorizontal).source == Q::BottomLeft);
    CHECK(duplication_move(DuplicationClass::BottomHorizontal).target == Q::BottomRight);
    CHECK(duplication_move(DuplicationClass::LeftVertical).source == Q::TopLeft);
    CHECK(duplication_move(DuplicationClass::LeftVertical).target == Q::BottomLeft);
    CHECK(duplication_move(DuplicationClass::RightVertical).source == Q::TopRight);
    CHECK(duplication_move(DuplicationClass::RightVertical).target == Q::BottomRight);
    CHECK(duplication_move(DuplicationClass::Diagonal).source == Q::TopLeft);
    CHECK(duplication_move(DuplicationClass::Diagonal).target == Q::BottomRight);
    CHECK(duplication_move(DuplicationClass::OffDiagonal).source == Q::TopRight);
    CHECK(duplication_move(DuplicationClass::OffDiagonal).target == Q::BottomLeft);
}

TEST_CASE("duplication transform contract on random patches", "[pretext]") {
    Rng rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        const PatchImage patch = random_patch(16, rng);

        CHECK(apply_duplication(patch, DuplicationClass::Normal).pixels == patch.pixels);

        for (DuplicationClass c : all_duplication_classes) {
            if (c == DuplicationClass::Normal) continue;
            const QuadrantCopy move = duplication_move(c);
            const PatchImage out = apply_duplication(patch, c);

            // implicated quadrants bit-equal
            CHECK(extract_quadrant(out, move.target).pixels ==
                  extract_quadrant(patch, move.source).pixels);
            // untouched quadrants preserved
            for (Quadrant q : all_quadrants)
                if (q != move.target)
                    CHECK(extract_quadrant(out, q).pixels == extract_quadrant(patch, q).pixels);
            // idempotence
            CHECK(apply_duplication(out, c).pixels == out.pixels);
        }
    }
}

TEST_CASE("the seven outputs are pairwise distinct for distinct quadrants", "[pretext]") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const PatchImage patch = random_patch(8, rng);
        std::set<std::vector<std::uint8_t>> quads;
        for (Quadrant q : all_quadrants) quads.insert(extract_quadrant(patch, q).pixels);
        if (quads.size() != 4) continue;  // astronomically unlikely

        std::set<std::vector<std::uint8_t>> outputs;
        for (DuplicationClass c : all_duplication_classes)
            outputs.insert(apply_duplication(patch, c).pixels);
        CHECK(outputs.size() == static_cast<std::size_t>(kNumDuplicationClasses));
    }
}

TEST_CASE("pretext example generation is ordered and labelled", "[pretext]") {
    Rng rng(3);
    const PatchImage patch = random_patch(8, rng);
    const auto examples = generate_pretext_examples(patch);
    REQUIRE(examples.size() == 7);
    for (int k = 0; k < 7; ++k) {
        CHECK(static_cast<int>(examples[static_cast<std::size_t>(k)].label) == k);
        CHECK(examples[static_cast<std::size_t>(k)].source_patch_id == patch.id());
    }
    CHECK(examples[0].patch.pixels == patch.pixels);
}

TEST_CASE("slice sampling draws ceil(fraction * n) without replacement", "[pretext]") {
    const DatasetManifest m400 = fake_manifest(400, 1);
    const auto ten = sample_pretext_slices(m400, {0.10, 42});
    const auto fifteen = sample_pretext_slices(m400, {0.15, 42});
    CHECK(ten.size() == 40);
    CHECK(fifteen.size() == 60);

    const DatasetManifest m80 = fake_manifest(80, 1);
    CHECK(sample_pretext_slices(m80, {0.15, 1}).size() == 12);
    CHECK(sample_pretext_slices(m80, {0.10, 1}).size() == 8);
    CHECK(sample_pretext_slices(m80, {1.0, 1}).size() == 80);

    const auto a = sample_pretext_slices(m80, {0.25, 5});
    const auto b = sample_pretext_slices(m80, {0.25, 5});
    const auto c = sample_pretext_slices(m80, {0.25, 6});
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<std::string>(a.begin(), a.end()).size() == a.size());

    const std::vector<std::string> pool = {"s1002", "s1005", "s1008"};
    for (const auto& id : sample_pretext_slices(m80, {0.99, 7}, &pool))
        CHECK(std::find(pool.begin(), pool.end(), id) != pool.end());

    CHECK_THROWS_AS(sample_pretext_slices(DatasetManifest{}, {0.5, 0}), EmptyManifest);
    CHECK_THROWS_AS(sample_pretext_slices(m80, {0.0, 0}), DataError);
    CHECK_THROWS_AS(sample_pretext_slices(m80, {1.5, 0}), DataError);
}

TEST_CASE("sampled 40-slice pool expands to 480 sources and 3360 examples", "[pretext]") {
    const DatasetManifest m = fake_manifest(400, 12);
    const auto sampled = sample_pretext_slices(m, {0.10, 9});
    std::size_t sources = 0;
    for (const auto& id : sampled) sources += m.find(id)->patches.size();
    CHECK(sources == 480);
    CHECK(sources * static_cast<std::size_t>(kNumDuplicationClasses) == 3360);

    const auto sampled15 = sample_pretext_slices(m, {0.15, 9});
    std::size_t sources15 = 0;
    for (const auto& id : sampled15) sources15 += m.find(id)->patches.size();
    CHECK(sources15 == 720);
    CHECK(sources15 * static_cast<std::size_t>(kNumDuplicationClasses) == 5040);
}

TEST_CASE("pretext manifest round trip", "[pretext]") {
    std::vector<PretextManifestRow> rows;
    for (int k = 0; k < 7; ++k) {
        PretextManifestRow row;
        row.source_patch_id = "sl#r0c" + std::to_string(k);
        row.label = static_cast<DuplicationClass>(k);
        row.example_id = pretext_example_name(row.source_patch_id, row.label);
        rows.push_back(row);
    }
    CHECK(rows[3].example_id == "sl#r0c3__d3");

    const auto path = temp_file("pretext.csv");
    write_pretext_manifest(rows, path);
    const auto back = read_pretext_manifest(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].example_id == rows[i].example_id);
        CHECK(back[i].source_patch_id == rows[i].source_patch_id);
        CHECK(back[i].label == rows[i].label);
    }

    const auto bad = temp_file("bad_pretext.csv");
    {
        std::ofstream out(bad);
        out << "example_id,source_patch_id,label\nx__d9,x,9\n";
    }
    CHECK_THROWS_AS(read_pretext_manifest(bad), LabelOutOfRange);
}
