#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cellvit/errors.hpp"
#include "cellvit/export.hpp"
#include "cellvit/gradcheck.hpp"
#include "cellvit/metrics.hpp"
#include "cellvit/model.hpp"
#include "cellvit/pipeline.hpp"
#include "cellvit/sampling.hpp"
#include "cellvit/tile_io.hpp"
#include "detail/json_writer.hpp"

namespace {

using namespace cellvit;

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t resolve_workers(std::size_t cli_value) {
    if (const char* env = std::getenv("CELLVIT_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return cli_value;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

SegMode parse_mode(const std::string& mode) {
    if (mode == "hovernet") return SegMode::hovernet;
    if (mode == "stardist") return SegMode::stardist;
    if (mode == "cppnet") return SegMode::cppnet;
    throw DomainError("unknown mode: " + mode);
}

struct InferArgs {
    std::string manifest, weights, out, geojson;
    std::int64_t tile_size = 0; // 0 = take from manifest
    std::int64_t overlap = -1;
    std::string mode = "hovernet";
    std::size_t workers = 4;
    bool include_embeddings = false;
    double merge_iou = 0.25;
    PostprocParams postproc;
};

int cmd_infer(const InferArgs& args) {
    if (!std::filesystem::exists(args.weights)) {
        std::cerr << "weights not found: " << args.weights << "\n";
        return 1;
    }
    const auto start = std::chrono::steady_clock::now();

    DirectoryTileSource tiles(args.manifest);
    const std::int64_t tile_size = args.tile_size > 0 ? args.tile_size : tiles.tile_size();
    const std::int64_t overlap = args.overlap >= 0 ? args.overlap : tiles.overlap();
    const TileGrid grid = plan_tiles(tiles.wsi_width(), tiles.wsi_height(), tile_size, overlap);

    const Weights weights = load_weights(args.weights);
    if (!weights.contains("meta.config")) {
        std::cerr << "weights file carries no meta.config tensor\n";
        return 1;
    }
    const TensorF32& meta = weights.at("meta.config");
    ModelConfig cfg;
    cfg.patch_size = static_cast<std::size_t>(meta[0]);
    cfg.embed_dim = static_cast<std::size_t>(meta[1]);
    cfg.depth = static_cast<std::size_t>(meta[2]);
    cfg.heads = static_cast<std::size_t>(meta[3]);
    cfg.in_channels = static_cast<std::size_t>(meta[4]);
    cfg.num_nuclei_classes = static_cast<std::size_t>(meta[5]);
    cfg.num_tissue_classes = static_cast<std::size_t>(meta[6]);
    cfg.trained_pos_grid = static_cast<std::size_t>(meta[7]);
    cfg.decoder_widths.clear();
    for (std::size_t s = 0;; ++s) {
        const std::string name = "dec.np.up" + std::to_string(s) + ".b";
        if (!weights.contains(name)) break;
        cfg.decoder_widths.push_back(weights.at(name).element_count());
    }
    cfg.validate();

    RunParams params;
    params.postproc = args.postproc;
    params.mode = parse_mode(args.mode);
    params.workers = resolve_workers(args.workers);
    params.include_embeddings = args.include_embeddings;
    params.merge_iou = args.merge_iou;
    params.mpp = tiles.mpp();
    params.model_name = std::filesystem::path(args.weights).stem().string();

    ModelBundleSource source(tiles, weights, cfg);
    const WsiResult result = run_wsi(source, grid, params);
    export_json(result, args.out, args.include_embeddings);
    if (!args.geojson.empty()) export_geojson(result, args.geojson);

    std::printf("tiles %zu nuclei %zu wall %.2fs\n", grid.tiles.size(), result.records.size(),
                seconds_since(start));
    return 0;
}

struct EvalArgs {
    std::string gt, pred, out;
    double mpp = 0.25;
    double radius = 0.0; // 0 = derive from mpp
    std::size_t num_classes = 6;
};

int cmd_eval(const EvalArgs& args) {
    const double radius = args.radius > 0.0 ? args.radius : (args.mpp <= 0.375 ? 12.0 : 6.0);

    MetricReport report;
    if (args.gt.size() > 5 && args.gt.substr(args.gt.size() - 5) == ".json") {
        // Record-JSON route: centroid detection and classification only.
        const WsiResult gt = import_json(args.gt);
        const WsiResult pred = import_json(args.pred);
        const MatchResult m = match_centroids(gt.records, pred.records, radius);
        report.detection = detection_scores(m);
        std::map<std::int32_t, std::size_t> gcls, pcls;
        for (const auto& r : gt.records) gcls[static_cast<std::int32_t>(r.id)] = r.class_id;
        for (const auto& r : pred.records) pcls[static_cast<std::int32_t>(r.id)] = r.class_id;
        for (std::size_t cls = 1; cls < args.num_classes; ++cls) {
            bool seen = false;
            for (const auto& r : gt.records) seen = seen || r.class_id == cls;
            for (const auto& r : pred.records) seen = seen || r.class_id == cls;
            if (!seen) continue;
            ClassMetrics cm;
            const DetectionScores s = classification_scores(m, gcls, pcls, cls);
            cm.precision = s.precision;
            cm.recall = s.recall;
            cm.f1 = s.f1;
            report.per_class[cls] = cm;
        }
    } else {
        const InstanceMap gt = read_cvtf_labels(args.gt);
        const InstanceMap pred = read_cvtf_labels(args.pred);
        report = evaluate_instance_maps({&gt}, {&pred}, args.num_classes, radius);
    }

    const std::string json = report.to_json();
    if (args.out.empty()) {
        std::printf("%s\n", json.c_str());
    } else {
        std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + args.out);
        out << json;
    }
    return 0;
}

struct SampleArgs {
    std::string index, out;
    double gamma = 0.85;
};

int cmd_sample_weights(const SampleArgs& args) {
    const DatasetIndex index = DatasetIndex::from_json(read_text_file(args.index));
    const std::vector<double> weights = sampling_weights(index, args.gamma);

    detail::JsonWriter w;
    w.raw("{");
    w.key("gamma_s");
    w.fixed(args.gamma, 4);
    w.raw(",");
    w.key("weights");
    w.raw("[");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (i) w.raw(",");
        w.fixed(weights[i], 9);
    }
    w.raw("]}");

    if (args.out.empty()) {
        std::printf("%s\n", w.str().c_str());
    } else {
        std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + args.out);
        out << w.str();
    }
    return 0;
}

struct GradcheckArgs {
    std::uint64_t seed = 42;
    std::size_t tensors = 50;
    bool perturb_analytic = false;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    const GradCheckReport report = run_gradcheck(args.seed, args.tensors, args.perturb_analytic);
    std::fputs(format_gradcheck(report).c_str(), stdout);
    return report.passed ? 0 : 1;
}

struct BenchArgs {
    std::int64_t size = 4096;
    std::uint64_t seed = 7;
    std::size_t workers = 4;
    std::size_t embed_dim = 16;
    std::size_t depth = 4;
    std::size_t heads = 2;
    std::size_t patch_size = 16;
};

int cmd_bench(const BenchArgs& args) {
    ModelConfig cfg;
    cfg.patch_size = args.patch_size;
    cfg.embed_dim = args.embed_dim;
    cfg.depth = args.depth;
    cfg.heads = args.heads;
    cfg.trained_pos_grid = 64;
    cfg.decoder_widths.assign(1, 16);
    while ((std::size_t{1} << cfg.decoder_widths.size()) < cfg.patch_size)
        cfg.decoder_widths.push_back(8);
    cfg.validate();

    const Weights weights = init_weights(cfg, args.seed);
    const SyntheticTileSource tiles(args.size, args.size, args.seed);
    ModelBundleSource source(tiles, weights, cfg);

    RunParams params;
    params.workers = resolve_workers(args.workers);
    params.model_name = "bench";

    struct PathResult {
        double wall = 0.0;
        std::int64_t pixels = 0;
        std::size_t nuclei = 0;
        std::size_t tiles = 0;
    };
    auto run_path = [&](std::int64_t tile_size, std::int64_t overlap) {
        const TileGrid grid = plan_tiles(args.size, args.size, tile_size, overlap);
        const auto start = std::chrono::steady_clock::now();
        const WsiResult result = run_wsi(source, grid, params);
        PathResult r;
        r.wall = seconds_since(start);
        r.pixels = grid.processed_pixels();
        r.nuclei = result.records.size();
        r.tiles = grid.tiles.size();
        return r;
    };

    const PathResult large = run_path(1024, 64);
    const PathResult small = run_path(256, 64);

    const double closed_form = (1024.0 / 960.0) * (1024.0 / 960.0) /
                               ((256.0 / 192.0) * (256.0 / 192.0));
    std::printf("tile 1024/64: tiles %zu pixels %lld nuclei %zu wall %.2fs\n", large.tiles,
                static_cast<long long>(large.pixels), large.nuclei, large.wall);
    std::printf("tile  256/64: tiles %zu pixels %lld nuclei %zu wall %.2fs\n", small.tiles,
                static_cast<long long>(small.pixels), small.nuclei, small.wall);
    std::printf("pixel ratio (256/1024 paths): %.4f\n",
                static_cast<double>(small.pixels) / static_cast<double>(large.pixels));
    std::printf("closed-form per-pixel redundancy ratio: %.4f (large path processes %.2fx fewer)\n",
                closed_form, 1.0 / closed_form);
    std::printf("wall-clock speedup (256 path / 1024 path): %.3f\n", small.wall / large.wall);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CellViT nuclei instance segmentation toolkit"};
    app.require_subcommand(1);

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "Run tiled inference over a slide manifest");
    infer->add_option("--manifest", infer_args.manifest, "Tile manifest JSON")->required();
    infer->add_option("--weights", infer_args.weights, "CVTW weight file")->required();
    infer->add_option("--out", infer_args.out, "Result JSON path")->required();
    infer->add_option("--geojson", infer_args.geojson, "Optional GeoJSON path");
    infer->add_option("--tile-size", infer_args.tile_size, "Tile size (default: manifest)");
    infer->add_option("--overlap", infer_args.overlap, "Tile overlap (default: manifest)");
    infer->add_option("--mode", infer_args.mode, "hovernet|stardist|cppnet");
    infer->add_option("--workers", infer_args.workers, "Worker threads");
    infer->add_flag("--include-embeddings", infer_args.include_embeddings,
                    "Attach token embeddings to records");
    infer->add_option("--merge-iou", infer_args.merge_iou, "Seam duplicate IoU threshold");
    infer->add_option("--np-threshold", infer_args.postproc.np_threshold);
    infer->add_option("--edge-threshold", infer_args.postproc.edge_threshold);
    infer->add_option("--prob-threshold", infer_args.postproc.prob_threshold);
    infer->add_option("--nms-threshold", infer_args.postproc.nms_threshold);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
    eval->add_option("--gt", eval_args.gt, "GT instance map (CVTF) or record JSON")->required();
    eval->add_option("--pred", eval_args.pred, "Prediction instance map or record JSON")
        ->required();
    eval->add_option("--out", eval_args.out, "Report JSON path (default stdout)");
    eval->add_option("--mpp", eval_args.mpp, "Microns per pixel (radius default: 12px@0.25, 6px@0.5)");
    eval->add_option("--radius", eval_args.radius, "Centroid match radius override (px)");
    eval->add_option("--num-classes", eval_args.num_classes, "Nuclei class channel count");

    SampleArgs sample_args;
    auto* sample = app.add_subcommand("sample-weights", "Compute oversampling weights");
    sample->add_option("--index", sample_args.index, "DatasetIndex JSON")->required();
    sample->add_option("--out", sample_args.out, "Weight vector JSON (default stdout)");
    sample->add_option("--gamma", sample_args.gamma, "Oversampling strength in [0,1]");

    GradcheckArgs grad_args;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of loss gradients");
    grad->add_option("--seed", grad_args.seed, "RNG seed");
    grad->add_option("--tensors", grad_args.tensors, "Tensors per loss");
    grad->add_flag("--perturb-analytic", grad_args.perturb_analytic,
                   "Negative control: corrupt one gradient per loss");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Compare 1024/64 vs 256/64 tiling throughput");
    bench->add_option("--size", bench_args.size, "Synthetic WSI side length");
    bench->add_option("--seed", bench_args.seed, "RNG seed");
    bench->add_option("--workers", bench_args.workers, "Worker threads");
    bench->add_option("--embed-dim", bench_args.embed_dim);
    bench->add_option("--depth", bench_args.depth);
    bench->add_option("--heads", bench_args.heads);
    bench->add_option("--patch-size", bench_args.patch_size);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (infer->parsed()) return cmd_infer(infer_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (sample->parsed()) return cmd_sample_weights(sample_args);
        if (grad->parsed()) return cmd_gradcheck(grad_args);
        if (bench->parsed()) return cmd_bench(bench_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
