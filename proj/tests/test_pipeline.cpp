#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cellvit/errors.hpp"
#include "cellvit/export.hpp"
#include "cellvit/metrics.hpp"
#include "cellvit/pipeline.hpp"
#include "cellvit/tile_io.hpp"
#include "support.hpp"

using namespace cellvit;

TEST_CASE("tile planning") {
    const TileGrid one = plan_tiles(1024, 1024, 1024, 64);
    REQUIRE(one.tiles.size() == 1);
    CHECK(one.tiles[0] == std::pair<std::int64_t, std::int64_t>{0, 0});

    const TileGrid two = plan_tiles(1024, 1984, 1024, 64);
    REQUIRE(two.tiles.size() == 2);
    CHECK(two.tiles[0] == std::pair<std::int64_t, std::int64_t>{0, 0});
    CHECK(two.tiles[1] == std::pair<std::int64_t, std::int64_t>{960, 0});

    // scripted stride arithmetic for the 4096 case
    const TileGrid big = plan_tiles(4096, 4096, 1024, 64);
    CHECK(big.tiles.size() == 25);
    std::set<std::int64_t> rows;
    for (const auto& [r, c] : big.tiles) rows.insert(r);
    CHECK(rows == std::set<std::int64_t>{0, 960, 1920, 2880, 3072});
    CHECK(big.processed_pixels() == 25ll * 1024 * 1024);

    // coverage: every pixel of a small plan lies in at least one tile
    const TileGrid cover = plan_tiles(300, 200, 128, 32);
    for (std::int64_t r = 0; r < 200; ++r) {
        for (std::int64_t c = 0; c < 300; ++c) {
            bool hit = false;
            for (const auto& [tr, tc] : cover.tiles)
                hit = hit || (r >= tr && r < tr + 128 && c >= tc && c < tc + 128);
            CHECK(hit);
        }
    }

    CHECK_THROWS_AS(plan_tiles(2048, 2048, 1024, 1024), OverlapTooLarge);
}

TEST_CASE("process_bundle on blank and synthetic tiles") {
    SyntheticScene empty(256, 256, 6);
    const PredictionBundle blank = empty.ideal_bundle(0, 0, 128, 16);
    const TileOutput none = process_bundle(blank, PostprocParams{}, SegMode::hovernet);
    CHECK(none.records.empty());

    SyntheticScene scene(256, 256, 6);
    scene.add({40.0, 40.0, 8.0, 8.0, 1});
    scene.add({40.0, 90.0, 8.0, 9.0, 2});
    scene.add({90.0, 64.0, 9.0, 8.0, 3});
    const PredictionBundle bundle = scene.ideal_bundle(0, 0, 128, 16);
    const TileOutput three = process_bundle(bundle, PostprocParams{}, SegMode::hovernet);
    REQUIRE(three.records.size() == 3);
    for (const auto& rec : three.records) {
        CHECK(rec.area_px > 100);
        CHECK(rec.class_id >= 1);
        CHECK(rec.class_id <= 3);
    }

    // determinism
    const TileOutput again = process_bundle(bundle, PostprocParams{}, SegMode::hovernet);
    REQUIRE(again.records.size() == three.records.size());
    for (std::size_t i = 0; i < three.records.size(); ++i) {
        CHECK(again.records[i].centroid_r == three.records[i].centroid_r);
        CHECK(again.records[i].contour == three.records[i].contour);
    }

    // stardist mode recovers the same scene through NMS
    const TileOutput star = process_bundle(bundle, PostprocParams{}, SegMode::stardist);
    CHECK(star.records.size() == 3);
}

TEST_CASE("embedding association footprints and exact means") {
    const std::size_t p = 16;
    InstanceMap inst;
    inst.height = inst.width = 64; // 4x4 token grid
    inst.labels.assign(64 * 64, 0);
    inst.count = 2;
    inst.classes = {0, 1, 1};
    // instance 1 inside token (1,1); instance 2 spans tokens (2,0) and (2,1)
    for (std::size_t r = 20; r < 28; ++r)
        for (std::size_t c = 20; c < 28; ++c) inst.labels[r * 64 + c] = 1;
    for (std::size_t r = 36; r < 44; ++r)
        for (std::size_t c = 8; c < 24; ++c) inst.labels[r * 64 + c] = 2;

    oracle::Rng rng(55);
    TensorF32 tokens({16, 4});
    for (std::size_t i = 0; i < tokens.element_count(); ++i)
        tokens[i] = static_cast<float>(rng.uniform() * 2.0 - 1.0);

    const auto embeddings = associate_embeddings(inst, tokens, p);
    REQUIRE(embeddings.size() == 3);

    // single-token nucleus: exactly that token's vector
    const std::size_t tok11 = 1 * 4 + 1;
    for (std::size_t k = 0; k < 4; ++k)
        CHECK(embeddings[1][k] == tokens[tok11 * 4 + k]);

    // two-token nucleus: bit-exact (v1 + v2) / 2
    const std::size_t tok20 = 2 * 4 + 0, tok21 = 2 * 4 + 1;
    for (std::size_t k = 0; k < 4; ++k) {
        const float expect = (tokens[tok20 * 4 + k] + tokens[tok21 * 4 + k]) / 2.0f;
        CHECK(embeddings[2][k] == expect);
    }
}

TEST_CASE("embedding footprint equals a scalar oracle on a random blob") {
    oracle::Rng rng(56);
    InstanceMap inst;
    inst.height = inst.width = 64;
    inst.labels.assign(64 * 64, 0);
    inst.count = 1;
    inst.classes = {0, 1};
    std::set<std::size_t> expect_tokens;
    for (int k = 0; k < 200; ++k) {
        const std::size_t r = 10 + rng.next() % 40;
        const std::size_t c = 10 + rng.next() % 40;
        inst.labels[r * 64 + c] = 1;
        expect_tokens.insert((r / 16) * 4 + c / 16);
    }
    TensorF32 tokens({16, 3});
    for (std::size_t i = 0; i < tokens.element_count(); ++i)
        tokens[i] = static_cast<float>(rng.uniform());

    const auto embeddings = associate_embeddings(inst, tokens, 16);
    std::vector<float> mean(3, 0.0f);
    for (std::size_t t : expect_tokens)
        for (std::size_t k = 0; k < 3; ++k) mean[k] += tokens[t * 3 + k];
    for (std::size_t k = 0; k < 3; ++k) {
        mean[k] /= static_cast<float>(expect_tokens.size());
        CHECK(embeddings[1][k] == doctest::Approx(mean[k]).epsilon(1e-6));
    }
}

TEST_CASE("merge keeps core records, deduplicates seam detections, keeps distinct neighbours") {
    // 256-wide slide split into two 160px tiles overlapping by 64
    const TileGrid grid = plan_tiles(256, 160, 160, 64);
    REQUIRE(grid.tiles.size() == 2);

    SyntheticScene scene(256, 160, 6);
    scene.add({80.0, 40.0, 8.0, 8.0, 1});   // core of tile 0 only
    scene.add({80.0, 112.0, 9.0, 9.0, 2});  // inside the seam zone [96,160)
    scene.add({40.0, 130.0, 7.0, 7.0, 3});  // also seam, distinct from the second
    SyntheticBundleSource source(scene, 16);

    RunParams params;
    params.workers = 1;
    const WsiResult result = run_wsi(source, grid, params);

    REQUIRE(result.records.size() == 3);
    std::multiset<std::size_t> classes;
    for (const auto& rec : result.records) classes.insert(rec.class_id);
    CHECK(classes == std::multiset<std::size_t>{1, 2, 3});

    // no two survivors overlap beyond the merge threshold
    for (std::size_t i = 0; i < result.records.size(); ++i)
        for (std::size_t j = i + 1; j < result.records.size(); ++j) {
            const auto& a = result.records[i];
            const auto& b = result.records[j];
            const std::int64_t r0 = std::min(a.bbox_r0, b.bbox_r0);
            const std::int64_t c0 = std::min(a.bbox_c0, b.bbox_c0);
            const std::int64_t r1 = std::max(a.bbox_r1, b.bbox_r1);
            const std::int64_t c1 = std::max(a.bbox_c1, b.bbox_c1);
            const auto ma = rasterize_record_mask(a, r0, c0, r1 - r0 + 1, c1 - c0 + 1);
            const auto mb = rasterize_record_mask(b, r0, c0, r1 - r0 + 1, c1 - c0 + 1);
            std::size_t inter = 0, uni = 0;
            for (std::size_t k = 0; k < ma.size(); ++k) {
                inter += ma[k] & mb[k];
                uni += ma[k] | mb[k];
            }
            if (uni > 0) CHECK(static_cast<double>(inter) / uni <= 0.25);
        }

    // ids are contiguous 1..n
    std::set<std::size_t> ids;
    for (const auto& rec : result.records) ids.insert(rec.id);
    CHECK(ids == std::set<std::size_t>{1, 2, 3});
}

TEST_CASE("single-tile run equals process_bundle plus the coordinate shift") {
    SyntheticScene scene(128, 128, 6);
    scene.add({50.0, 70.0, 8.0, 8.0, 2});
    SyntheticBundleSource source(scene, 16);

    const TileGrid grid = plan_tiles(128, 128, 128, 32);
    RunParams params;
    const WsiResult viaRun = run_wsi(source, grid, params);

    const TileOutput direct =
        process_bundle(scene.ideal_bundle(0, 0, 128, 16), params.postproc, params.mode);
    REQUIRE(viaRun.records.size() == direct.records.size());
    CHECK(viaRun.records[0].centroid_r == direct.records[0].centroid_r);
    CHECK(viaRun.records[0].centroid_c == direct.records[0].centroid_c);
}

TEST_CASE("worker count does not change the merged record multiset") {
    SyntheticScene scene = SyntheticScene::random(512, 512, 40, 123, 7.0, 11.0, 6);
    SyntheticBundleSource source(scene, 16);
    const TileGrid grid = plan_tiles(512, 512, 256, 64);

    RunParams one;
    one.workers = 1;
    RunParams eight;
    eight.workers = 8;
    const WsiResult a = run_wsi(source, grid, one);
    const WsiResult b = run_wsi(source, grid, eight);

    REQUIRE(a.records.size() == b.records.size());
    const auto key = [](const NucleusRecord& r) {
        return std::tuple<double, double, std::size_t>(r.centroid_r, r.centroid_c, r.class_id);
    };
    std::multiset<std::tuple<double, double, std::size_t>> ka, kb;
    for (const auto& r : a.records) ka.insert(key(r));
    for (const auto& r : b.records) kb.insert(key(r));
    CHECK(ka == kb);
}

TEST_CASE("result json export round-trips byte-identically") {
    SyntheticScene scene = SyntheticScene::random(512, 512, 30, 321, 7.0, 11.0, 6);
    SyntheticBundleSource source(scene, 16);
    const TileGrid grid = plan_tiles(512, 512, 256, 64);
    RunParams params;
    params.include_embeddings = true;
    const WsiResult result = run_wsi(source, grid, params);
    REQUIRE(result.records.size() > 10);

    const std::string text = result_to_json(result, true);
    const WsiResult parsed = result_from_json(text);
    const std::string again = result_to_json(parsed, true);
    CHECK(text == again);

    // parsed fields reproduce the exported values
    REQUIRE(parsed.records.size() == result.records.size());
    CHECK(parsed.records[0].id == result.records[0].id);
    CHECK(parsed.records[0].class_id == result.records[0].class_id);
    CHECK(parsed.records[0].bbox_r0 == result.records[0].bbox_r0);
    CHECK(parsed.records[0].contour == result.records[0].contour);
    CHECK(parsed.records[0].embedding.size() == result.records[0].embedding.size());

    // empty result is still a valid document
    WsiResult empty;
    const std::string empty_text = result_to_json(empty, false);
    CHECK(empty_text.find("\"nuclei\":[]") != std::string::npos);
    const WsiResult empty_back = result_from_json(empty_text);
    CHECK(empty_back.records.empty());
}

TEST_CASE("geojson export follows the FeatureCollection structure") {
    SyntheticScene scene(128, 128, 6);
    scene.add({40.0, 40.0, 8.0, 8.0, 1});
    scene.add({80.0, 90.0, 8.0, 8.0, 5});
    SyntheticBundleSource source(scene, 16);
    const TileGrid grid = plan_tiles(128, 128, 128, 32);
    const WsiResult result = run_wsi(source, grid, RunParams{});
    REQUIRE(result.records.size() == 2);

    const std::string text = result_to_geojson(result);
    CHECK(text.find("\"type\":\"FeatureCollection\"") != std::string::npos);
    CHECK(text.find("\"type\":\"Feature\"") != std::string::npos);
    CHECK(text.find("\"type\":\"Polygon\"") != std::string::npos);
    CHECK(text.find("\"classification\":{\"name\":\"Neoplastic\"}") != std::string::npos);
    CHECK(text.find("\"classification\":{\"name\":\"Epithelial\"}") != std::string::npos);

    // rings are closed and in (col, row) order
    const NucleusRecord& rec = result.records[0];
    char first_vertex[64];
    std::snprintf(first_vertex, sizeof first_vertex, "[[[%.4f,%.4f],",
                  static_cast<double>(rec.contour.front().second),
                  static_cast<double>(rec.contour.front().first));
    CHECK(text.find(first_vertex) != std::string::npos);
}

TEST_CASE("cvtf containers and manifests round-trip") {
    const auto dir = std::filesystem::temp_directory_path();

    oracle::Rng rng(57);
    TensorF32 tile({16, 16, 3});
    for (std::size_t i = 0; i < tile.element_count(); ++i)
        tile[i] = static_cast<float>(rng.uniform());
    const std::string tile_path = (dir / "tile_rt.cvtf").string();
    write_cvtf(tile, tile_path);
    const TensorF32 back = read_cvtf(tile_path);
    CHECK(back.shape() == tile.shape());
    CHECK(back.storage() == tile.storage());

    InstanceMap inst;
    inst.height = inst.width = 8;
    inst.labels.assign(64, 0);
    for (std::size_t i = 9; i < 12; ++i) inst.labels[i] = 1;
    for (std::size_t i = 40; i < 44; ++i) inst.labels[i] = 2;
    inst.count = 2;
    inst.classes = {0, 3, 5};
    const std::string inst_path = (dir / "inst_rt.cvtf").string();
    write_cvtf_labels(inst, inst_path, true);
    const InstanceMap inst_back = read_cvtf_labels(inst_path);
    CHECK(inst_back.labels == inst.labels);
    CHECK(inst_back.classes == inst.classes);

    TileManifest m;
    m.wsi_width = 512;
    m.wsi_height = 256;
    m.tile_size = 256;
    m.overlap = 64;
    m.mpp = 0.25;
    m.tiles.push_back({0, 0, "r0_c0.raw"});
    m.tiles.push_back({0, 1, "r0_c1.raw"});
    const TileManifest m2 = TileManifest::from_json(m.to_json());
    CHECK(m2.wsi_width == 512);
    CHECK(m2.tiles.size() == 2);
    CHECK(m2.tiles[1].file == "r0_c1.raw");

    std::filesystem::remove(tile_path);
    std::filesystem::remove(inst_path);
}

TEST_CASE("directory tile source validates the grid") {
    const auto dir = std::filesystem::temp_directory_path() / "cellvit_tiles";
    std::filesystem::create_directories(dir);

    const TileGrid grid = plan_tiles(64, 64, 32, 8);
    TileManifest m;
    m.wsi_width = 64;
    m.wsi_height = 64;
    m.tile_size = 32;
    m.overlap = 8;
    std::set<std::int64_t> row_set, col_set;
    for (const auto& [r, c] : grid.tiles) {
        row_set.insert(r);
        col_set.insert(c);
    }
    std::vector<std::int64_t> rows(row_set.begin(), row_set.end());
    std::vector<std::int64_t> cols(col_set.begin(), col_set.end());
    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        for (std::size_t ci = 0; ci < cols.size(); ++ci) {
            const std::string file =
                "r" + std::to_string(ri) + "_c" + std::to_string(ci) + ".raw";
            TensorF32 t({32, 32, 3}, static_cast<float>(ri * 10 + ci));
            write_cvtf(t, (dir / file).string());
            m.tiles.push_back({static_cast<std::int64_t>(ri), static_cast<std::int64_t>(ci), file});
        }
    }
    {
        std::ofstream out(dir / "manifest.json");
        out << m.to_json();
    }

    DirectoryTileSource source((dir / "manifest.json").string());
    CHECK(source.wsi_width() == 64);
    const TensorF32 t = source.tile(grid.tiles[1].first, grid.tiles[1].second, 32);
    CHECK(t.extent(0) == 32);
    CHECK_THROWS_AS(source.tile(5, 5, 32), GridMismatch);
    CHECK_THROWS_AS(source.tile(0, 0, 64), GridMismatch);

    std::filesystem::remove_all(dir);
}

TEST_CASE("failing tiles abort the run with their origin") {
    struct ThrowingSource : BundleSource {
        PredictionBundle bundle(std::int64_t r, std::int64_t c, std::int64_t) const override {
            if (r == 0 && c == 96) throw IoError("disk gone");
            SyntheticScene empty(256, 256, 6);
            return empty.ideal_bundle(r, c, 128, 16);
        }
        std::size_t patch_size() const override { return 16; }
    } source;

    const TileGrid grid = plan_tiles(224, 224, 128, 32);
    bool threw = false;
    try {
        run_wsi(source, grid, RunParams{});
    } catch (const Error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("(0,96)") != std::string::npos);
        CHECK(std::string(e.what()).find("disk gone") != std::string::npos);
    }
    CHECK(threw);
}
