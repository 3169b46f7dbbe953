#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "cellvit/model.hpp"
#include "cellvit/pipeline.hpp"
#include "cellvit/tile_io.hpp"

using namespace cellvit;

namespace {

namespace fs = std::filesystem;

std::string binary_path() {
    const char* env = std::getenv("CELLVIT_BIN");
    return env ? env : "";
}

struct RunOutcome {
    int exit_code = -1;
    std::string stdout_text;
};

RunOutcome run_cli(const std::string& args) {
    const auto out_file = fs::temp_directory_path() / "cli_stdout.txt";
    const std::string cmd =
        binary_path() + " " + args + " > " + out_file.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    RunOutcome out;
    out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    out.stdout_text.assign((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    return out;
}

} // namespace

TEST_CASE("cli: sample-weights") {
    if (binary_path().empty()) return;
    const auto dir = fs::temp_directory_path();
    const auto index_path = dir / "cli_index.json";
    {
        std::ofstream out(index_path);
        out << R"({"entries":[{"id":"a","tissue":0,"cells":[1,0]},)"
            << R"({"id":"b","tissue":0,"cells":[1,1]},)"
            << R"({"id":"c","tissue":1,"cells":[0,1]}]})";
    }

    const RunOutcome gamma0 = run_cli("sample-weights --index " + index_path.string() +
                                      " --gamma 0");
    CHECK(gamma0.exit_code == 0);
    CHECK(gamma0.stdout_text.find("2.000000000,2.000000000,2.000000000") != std::string::npos);

    // deterministic bytes for the default gamma
    const RunOutcome a = run_cli("sample-weights --index " + index_path.string());
    const RunOutcome b = run_cli("sample-weights --index " + index_path.string());
    CHECK(a.exit_code == 0);
    CHECK(a.stdout_text == b.stdout_text);
    CHECK(a.stdout_text.find("\"gamma_s\":0.8500") != std::string::npos);

    // malformed index
    const auto bad_path = dir / "cli_bad.json";
    {
        std::ofstream out(bad_path);
        out << "{not json";
    }
    CHECK(run_cli("sample-weights --index " + bad_path.string()).exit_code == 1);

    // usage error
    CHECK(run_cli("sample-weights").exit_code == 2);
    fs::remove(index_path);
    fs::remove(bad_path);
}

TEST_CASE("cli: gradcheck determinism and negative control") {
    if (binary_path().empty()) return;
    const RunOutcome a = run_cli("gradcheck --seed 5 --tensors 3");
    const RunOutcome b = run_cli("gradcheck --seed 5 --tensors 3");
    CHECK(a.exit_code == 0);
    CHECK(a.stdout_text == b.stdout_text);
    CHECK(run_cli("gradcheck --seed 5 --tensors 3 --perturb-analytic").exit_code == 1);
}

TEST_CASE("cli: infer validates inputs then runs end to end") {
    if (binary_path().empty()) return;
    const auto dir = fs::temp_directory_path() / "cellvit_cli_infer";
    fs::create_directories(dir);

    // build a 64x64 slide as a single-tile manifest
    ModelConfig cfg;
    cfg.patch_size = 16;
    cfg.embed_dim = 16;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.trained_pos_grid = 4;
    cfg.decoder_widths = {8, 8, 8, 8};
    const Weights w = init_weights(cfg, 9);
    const auto weights_path = dir / "model.cvtw";
    save_weights(w, weights_path.string());

    SyntheticTileSource pixels(64, 64, 4);
    write_cvtf(pixels.tile(0, 0, 64), (dir / "r0_c0.raw").string());
    TileManifest m;
    m.wsi_width = m.wsi_height = 64;
    m.tile_size = 64;
    m.overlap = 16;
    m.tiles.push_back({0, 0, "r0_c0.raw"});
    {
        std::ofstream out(dir / "manifest.json");
        out << m.to_json();
    }

    // missing weights file
    const RunOutcome missing = run_cli("infer --manifest " + (dir / "manifest.json").string() +
                                       " --weights " + (dir / "nope.cvtw").string() +
                                       " --out " + (dir / "r.json").string());
    CHECK(missing.exit_code == 1);

    // overlap >= tile size
    const RunOutcome too_big = run_cli(
        "infer --manifest " + (dir / "manifest.json").string() + " --weights " +
        weights_path.string() + " --out " + (dir / "r.json").string() +
        " --tile-size 64 --overlap 64");
    CHECK(too_big.exit_code == 1);

    // a valid run writes the result file and a summary line
    const RunOutcome ok = run_cli("infer --manifest " + (dir / "manifest.json").string() +
                                  " --weights " + weights_path.string() + " --out " +
                                  (dir / "r.json").string() + " --geojson " +
                                  (dir / "r.geojson").string() + " --workers 2");
    CHECK(ok.exit_code == 0);
    CHECK(ok.stdout_text.find("tiles 1") != std::string::npos);
    CHECK(fs::exists(dir / "r.json"));
    CHECK(fs::exists(dir / "r.geojson"));

    // identical inputs produce identical output bytes
    const RunOutcome again = run_cli("infer --manifest " + (dir / "manifest.json").string() +
                                     " --weights " + weights_path.string() + " --out " +
                                     (dir / "r2.json").string());
    CHECK(again.exit_code == 0);
    const auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "r.json") == slurp(dir / "r2.json"));

    fs::remove_all(dir);
}

TEST_CASE("cli: bench smoke run reports pixels and speedup") {
    if (binary_path().empty()) return;
    const RunOutcome out = run_cli(
        "bench --size 640 --embed-dim 8 --depth 4 --heads 2 --patch-size 32 --workers 2");
    CHECK(out.exit_code == 0);
    CHECK(out.stdout_text.find("pixel ratio") != std::string::npos);
    CHECK(out.stdout_text.find("closed-form per-pixel redundancy ratio: 0.6400") !=
          std::string::npos);
    CHECK(out.stdout_text.find("speedup") != std::string::npos);
}

TEST_CASE("cli: eval on identical and disjoint maps") {
    if (binary_path().empty()) return;
    const auto dir = fs::temp_directory_path() / "cellvit_cli_eval";
    fs::create_directories(dir);

    InstanceMap gt;
    gt.height = gt.width = 32;
    gt.labels.assign(32 * 32, 0);
    for (std::size_t r = 4; r < 10; ++r)
        for (std::size_t c = 4; c < 10; ++c) gt.labels[r * 32 + c] = 1;
    for (std::size_t r = 20; r < 27; ++r)
        for (std::size_t c = 18; c < 25; ++c) gt.labels[r * 32 + c] = 2;
    gt.count = 2;
    gt.classes = {0, 1, 2};
    write_cvtf_labels(gt, (dir / "gt.cvtf").string(), true);

    InstanceMap empty;
    empty.height = empty.width = 32;
    empty.labels.assign(32 * 32, 0);
    empty.count = 0;
    empty.classes = {0};
    write_cvtf_labels(empty, (dir / "empty.cvtf").string(), true);

    const RunOutcome same = run_cli("eval --gt " + (dir / "gt.cvtf").string() + " --pred " +
                                    (dir / "gt.cvtf").string());
    CHECK(same.exit_code == 0);
    CHECK(same.stdout_text.find("\"bpq\":1.000000") != std::string::npos);
    CHECK(same.stdout_text.find("\"f1\":1.000000") != std::string::npos);

    const RunOutcome none = run_cli("eval --gt " + (dir / "gt.cvtf").string() + " --pred " +
                                    (dir / "empty.cvtf").string());
    CHECK(none.exit_code == 0);
    CHECK(none.stdout_text.find("\"bpq\":0.000000") != std::string::npos);

    fs::remove_all(dir);
}
