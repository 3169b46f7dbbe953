#include "cellvit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "cellvit/errors.hpp"
#include "cellvit/tile_io.hpp"
#include "detail/nn_ops.hpp"

namespace cellvit {

TileGrid plan_tiles(std::int64_t wsi_w, std::int64_t wsi_h, std::int64_t tile_size,
                    std::int64_t overlap) {
    if (tile_size <= 0 || wsi_w <= 0 || wsi_h <= 0)
        throw ShapeMismatch("plan_tiles: sizes must be positive");
    if (overlap < 0 || overlap >= tile_size)
        throw OverlapTooLarge("overlap " + std::to_string(overlap) +
                              " must be smaller than tile size " + std::to_string(tile_size));

    const auto axis_origins = [&](std::int64_t extent) {
        std::vector<std::int64_t> origins;
        std::int64_t pos = 0;
        const std::int64_t stride = tile_size - overlap;
        while (true) {
            if (pos + tile_size >= extent) {
                origins.push_back(std::max<std::int64_t>(0, extent - tile_size));
                break;
            }
            origins.push_back(pos);
            pos += stride;
        }
        return origins;
    };

    TileGrid grid;
    grid.wsi_width = wsi_w;
    grid.wsi_height = wsi_h;
    grid.tile_size = tile_size;
    grid.overlap = overlap;
    const auto rows = axis_origins(wsi_h);
    const auto cols = axis_origins(wsi_w);
    for (std::int64_t r : rows)
        for (std::int64_t c : cols) grid.tiles.emplace_back(r, c);
    return grid;
}

// ---------------------------------------------------------------------------
// Tile sources

SyntheticTileSource::SyntheticTileSource(std::int64_t wsi_w, std::int64_t wsi_h,
                                         std::uint64_t seed)
    : width_(wsi_w), height_(wsi_h), seed_(seed) {}

TensorF32 SyntheticTileSource::tile(std::int64_t origin_r, std::int64_t origin_c,
                                    std::int64_t tile_size) const {
    const auto ts = static_cast<std::size_t>(tile_size);
    TensorF32 out({ts, ts, 3});
    float* p = out.data();
    for (std::int64_t r = 0; r < tile_size; ++r) {
        const std::int64_t gr = origin_r + r;
        for (std::int64_t c = 0; c < tile_size; ++c) {
            const std::int64_t gc = origin_c + c;
            // One mix per pixel, derived from global coordinates so tile
            // overlaps agree bit-exactly.
            std::uint64_t z = seed_ ^ (static_cast<std::uint64_t>(gr) * 0x9E3779B97F4A7C15ull) ^
                              (static_cast<std::uint64_t>(gc) * 0xC2B2AE3D27D4EB4Full);
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
            z ^= z >> 31;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                p[ch] = static_cast<float>((z >> (ch * 21)) & 0x1FFFFF) * (1.0f / 2097152.0f);
            }
            p += 3;
        }
    }
    return out;
}

DirectoryTileSource::DirectoryTileSource(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    const std::string text((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    TileManifest m;
    try {
        m = TileManifest::from_json(text);
    } catch (const std::exception& e) {
        throw IoError("malformed manifest " + manifest_path + ": " + e.what());
    }
    wsi_width_ = m.wsi_width;
    wsi_height_ = m.wsi_height;
    tile_size_ = m.tile_size;
    overlap_ = m.overlap;
    mpp_ = m.mpp;
    dir_ = std::filesystem::path(manifest_path).parent_path().string();

    // Map manifest (row, col) grid indices onto planned origins.
    const TileGrid grid = plan_tiles(wsi_width_, wsi_height_, tile_size_, overlap_);
    std::vector<std::int64_t> row_origins, col_origins;
    for (const auto& [r, c] : grid.tiles) {
        if (std::find(row_origins.begin(), row_origins.end(), r) == row_origins.end())
            row_origins.push_back(r);
        if (std::find(col_origins.begin(), col_origins.end(), c) == col_origins.end())
            col_origins.push_back(c);
    }
    if (m.tiles.size() != grid.tiles.size())
        throw GridMismatch("manifest lists " + std::to_string(m.tiles.size()) +
                           " tiles, plan expects " + std::to_string(grid.tiles.size()));
    for (const auto& e : m.tiles) {
        if (e.row < 0 || static_cast<std::size_t>(e.row) >= row_origins.size() || e.col < 0 ||
            static_cast<std::size_t>(e.col) >= col_origins.size())
            throw GridMismatch("manifest tile index (" + std::to_string(e.row) + "," +
                               std::to_string(e.col) + ") outside planned grid");
        files_.push_back({{row_origins[static_cast<std::size_t>(e.row)],
                           col_origins[static_cast<std::size_t>(e.col)]},
                          e.file});
    }
}

TensorF32 DirectoryTileSource::tile(std::int64_t origin_r, std::int64_t origin_c,
                                    std::int64_t tile_size) const {
    if (tile_size != tile_size_)
        throw GridMismatch("requested tile size " + std::to_string(tile_size) +
                           " differs from manifest tile size " + std::to_string(tile_size_));
    for (const auto& [origin, file] : files_) {
        if (origin.first == origin_r && origin.second == origin_c) {
            TensorF32 t = read_cvtf((std::filesystem::path(dir_) / file).string());
            if (t.rank() != 3 || t.extent(0) != static_cast<std::size_t>(tile_size_) ||
                t.extent(1) != static_cast<std::size_t>(tile_size_))
                throw ShapeMismatch("tile file " + file + " has shape " + t.shape_str());
            return t;
        }
    }
    throw GridMismatch("no tile file for origin (" + std::to_string(origin_r) + "," +
                       std::to_string(origin_c) + ")");
}

PredictionBundle ModelBundleSource::bundle(std::int64_t origin_r, std::int64_t origin_c,
                                           std::int64_t tile_size) const {
    return forward(tiles_.tile(origin_r, origin_c, tile_size), weights_, cfg_);
}

// ---------------------------------------------------------------------------
// Synthetic scene

SyntheticScene SyntheticScene::random(std::int64_t wsi_w, std::int64_t wsi_h, std::size_t count,
                                      std::uint64_t seed, double r_min, double r_max,
                                      std::size_t num_nuclei_classes) {
    SyntheticScene scene(wsi_w, wsi_h, num_nuclei_classes);
    detail::SplitMix64 rng(seed);
    const double margin = r_max + 3.0;
    std::size_t attempts = 0;
    while (scene.nuclei_.size() < count && attempts < count * 200) {
        ++attempts;
        SyntheticNucleus n;
        n.center_r = margin + rng.uniform() * (static_cast<double>(wsi_h) - 2.0 * margin);
        n.center_c = margin + rng.uniform() * (static_cast<double>(wsi_w) - 2.0 * margin);
        n.radius_r = r_min + rng.uniform() * (r_max - r_min);
        n.radius_c = r_min + rng.uniform() * (r_max - r_min);
        n.class_id = 1 + rng.next() % (num_nuclei_classes > 1 ? num_nuclei_classes - 1 : 1);
        bool clash = false;
        for (const auto& other : scene.nuclei_) {
            const double dr = n.center_r - other.center_r;
            const double dc = n.center_c - other.center_c;
            const double min_gap = std::max(n.radius_r, n.radius_c) +
                                   std::max(other.radius_r, other.radius_c) + 3.0;
            if (dr * dr + dc * dc < min_gap * min_gap) {
                clash = true;
                break;
            }
        }
        if (!clash) scene.nuclei_.push_back(n);
    }
    return scene;
}

namespace {

bool inside_ellipse(const SyntheticNucleus& n, double r, double c) {
    const double dr = (r - n.center_r) / n.radius_r;
    const double dc = (c - n.center_c) / n.radius_c;
    return dr * dr + dc * dc <= 1.0;
}

} // namespace

InstanceMap SyntheticScene::window_truth(std::int64_t origin_r, std::int64_t origin_c,
                                         std::int64_t h, std::int64_t w) const {
    InstanceMap out;
    out.height = static_cast<std::size_t>(h);
    out.width = static_cast<std::size_t>(w);
    out.labels.assign(out.height * out.width, 0);
    std::vector<std::size_t> classes{0};

    std::int32_t next = 0;
    for (const auto& n : nuclei_) {
        if (n.center_r + n.radius_r < static_cast<double>(origin_r) ||
            n.center_r - n.radius_r > static_cast<double>(origin_r + h - 1) ||
            n.center_c + n.radius_c < static_cast<double>(origin_c) ||
            n.center_c - n.radius_c > static_cast<double>(origin_c + w - 1))
            continue;
        const std::int32_t id = ++next;
        classes.push_back(n.class_id);
        const auto r_lo = static_cast<std::int64_t>(std::floor(n.center_r - n.radius_r));
        const auto r_hi = static_cast<std::int64_t>(std::ceil(n.center_r + n.radius_r));
        const auto c_lo = static_cast<std::int64_t>(std::floor(n.center_c - n.radius_c));
        const auto c_hi = static_cast<std::int64_t>(std::ceil(n.center_c + n.radius_c));
        for (std::int64_t r = std::max(origin_r, r_lo); r <= std::min(origin_r + h - 1, r_hi); ++r) {
            for (std::int64_t c = std::max(origin_c, c_lo); c <= std::min(origin_c + w - 1, c_hi);
                 ++c) {
                if (inside_ellipse(n, static_cast<double>(r), static_cast<double>(c)))
                    out.labels[static_cast<std::size_t>(r - origin_r) * out.width +
                               static_cast<std::size_t>(c - origin_c)] = id;
            }
        }
    }
    out.count = static_cast<std::size_t>(next);
    out.classes = std::move(classes);
    return out;
}

PredictionBundle SyntheticScene::ideal_bundle(std::int64_t origin_r, std::int64_t origin_c,
                                              std::int64_t tile_size,
                                              std::size_t patch_size) const {
    const auto ts = static_cast<std::size_t>(tile_size);
    PredictionBundle b;
    b.np_map = TensorF32({ts, ts, 2});
    b.hv_map = TensorF32({ts, ts, 2});
    b.nt_map = TensorF32({ts, ts, classes_});
    b.tissue_logits = TensorF32({std::size_t{19}});

    // Background probabilities first; nuclei overwrite below.
    for (std::size_t i = 0; i < ts * ts; ++i) {
        b.np_map[i * 2] = 1.0f;
        b.nt_map[i * classes_] = 1.0f;
    }

    for (const auto& n : nuclei_) {
        if (n.center_r + n.radius_r < static_cast<double>(origin_r) ||
            n.center_r - n.radius_r > static_cast<double>(origin_r + tile_size - 1) ||
            n.center_c + n.radius_c < static_cast<double>(origin_c) ||
            n.center_c - n.radius_c > static_cast<double>(origin_c + tile_size - 1))
            continue;
        const auto r_lo = static_cast<std::int64_t>(std::floor(n.center_r - n.radius_r));
        const auto r_hi = static_cast<std::int64_t>(std::ceil(n.center_r + n.radius_r));
        const auto c_lo = static_cast<std::int64_t>(std::floor(n.center_c - n.radius_c));
        const auto c_hi = static_cast<std::int64_t>(std::ceil(n.center_c + n.radius_c));
        for (std::int64_t r = std::max(origin_r, r_lo);
             r <= std::min(origin_r + tile_size - 1, r_hi); ++r) {
            for (std::int64_t c = std::max(origin_c, c_lo);
                 c <= std::min(origin_c + tile_size - 1, c_hi); ++c) {
                if (!inside_ellipse(n, static_cast<double>(r), static_cast<double>(c))) continue;
                const std::size_t i = static_cast<std::size_t>(r - origin_r) * ts +
                                      static_cast<std::size_t>(c - origin_c);
                b.np_map[i * 2] = 0.0f;
                b.np_map[i * 2 + 1] = 1.0f;
                // Distance to the centroid normalized per instance by its
                // global extent, as the HV branch is trained to produce.
                b.hv_map[i * 2] = static_cast<float>(
                    std::clamp((static_cast<double>(c) - n.center_c) / n.radius_c, -1.0, 1.0));
                b.hv_map[i * 2 + 1] = static_cast<float>(
                    std::clamp((static_cast<double>(r) - n.center_r) / n.radius_r, -1.0, 1.0));
                b.nt_map[i * classes_] = 0.0f;
                const std::size_t cls = std::min(n.class_id, classes_ - 1);
                b.nt_map[i * classes_ + cls] = 1.0f;
            }
        }
    }

    // Deterministic token embeddings keyed by global token coordinates so
    // overlapping tiles agree exactly.
    const std::size_t grid = ts / patch_size;
    const std::size_t dim = 8;
    b.tokens_final = TensorF32({grid * grid, dim});
    for (std::size_t tr = 0; tr < grid; ++tr) {
        for (std::size_t tc = 0; tc < grid; ++tc) {
            const std::int64_t gtr = origin_r / static_cast<std::int64_t>(patch_size) +
                                     static_cast<std::int64_t>(tr);
            const std::int64_t gtc = origin_c / static_cast<std::int64_t>(patch_size) +
                                     static_cast<std::int64_t>(tc);
            float* v = b.tokens_final.data() + (tr * grid + tc) * dim;
            std::uint64_t z = 0x51A5C3D19E3779B9ull ^ (static_cast<std::uint64_t>(gtr) << 32) ^
                              static_cast<std::uint64_t>(static_cast<std::uint32_t>(gtc));
            for (std::size_t k = 0; k < dim; ++k) {
                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
                z ^= z >> 27;
                v[k] = static_cast<float>(z & 0xFFFF) * (1.0f / 65536.0f) - 0.5f;
            }
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// Per-tile processing

TileOutput process_bundle(const PredictionBundle& bundle, const PostprocParams& params,
                          SegMode mode) {
    TileOutput out;
    InstanceMap inst;
    if (mode == SegMode::hovernet) {
        inst = hovernet_separate(bundle, params);
    } else {
        const StarPolygonSet polys =
            star_candidates_from_np(bundle.np_map, params.prob_threshold, params.rays);
        inst = mode == SegMode::stardist
                   ? stardist_nms(polys, params.prob_threshold, params.nms_threshold)
                   : cppnet_nms(polys, params.prob_threshold, params.nms_threshold);
    }
    out.instances = majority_vote_types(inst, bundle.nt_map, params.unknown_class);
    out.records = extract_records(out.instances);
    out.tokens_final = bundle.tokens_final;
    return out;
}

TileOutput process_tile(const TensorF32& tile_image, const Weights& weights,
                        const ModelConfig& cfg, const PostprocParams& params, SegMode mode) {
    return process_bundle(forward(tile_image, weights, cfg), params, mode);
}

std::vector<std::vector<float>> associate_embeddings(const InstanceMap& inst,
                                                     const TensorF32& tokens_final,
                                                     std::size_t patch_size) {
    const std::size_t grid_cols = inst.width / patch_size;
    const std::size_t grid_rows = inst.height / patch_size;
    if (tokens_final.rank() != 2 || tokens_final.extent(0) != grid_rows * grid_cols)
        throw ShapeMismatch("associate_embeddings: token count " +
                            std::to_string(tokens_final.extent(0)) + " does not match grid " +
                            std::to_string(grid_rows) + "x" + std::to_string(grid_cols));
    const std::size_t dim = tokens_final.extent(1);

    std::vector<std::set<std::uint32_t>> footprint(inst.count + 1);
    for (std::size_t r = 0; r < inst.height; ++r) {
        for (std::size_t c = 0; c < inst.width; ++c) {
            const std::int32_t id = inst.labels[r * inst.width + c];
            if (id <= 0) continue;
            footprint[static_cast<std::size_t>(id)].insert(
                static_cast<std::uint32_t>((r / patch_size) * grid_cols + c / patch_size));
        }
    }

    std::vector<std::vector<float>> out(inst.count + 1);
    for (std::size_t id = 1; id <= inst.count; ++id) {
        if (footprint[id].empty()) continue;
        std::vector<float> mean(dim, 0.0f);
        for (std::uint32_t tok : footprint[id]) { // ascending raster order
            const float* v = tokens_final.data() + static_cast<std::size_t>(tok) * dim;
            for (std::size_t k = 0; k < dim; ++k) mean[k] += v[k];
        }
        const float inv = 1.0f / static_cast<float>(footprint[id].size());
        for (std::size_t k = 0; k < dim; ++k) mean[k] *= inv;
        out[id] = std::move(mean);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Merging

namespace {

struct Rect {
    std::int64_t r0, c0, r1, c1; // inclusive
    bool intersects(const Rect& o) const {
        return !(r1 < o.r0 || o.r1 < r0 || c1 < o.c0 || o.c1 < c0);
    }
};

Rect tile_rect(const TileGrid& grid, std::size_t idx) {
    const auto& [r, c] = grid.tiles[idx];
    return {r, c, r + grid.tile_size - 1, c + grid.tile_size - 1};
}

Rect record_rect(const NucleusRecord& rec) {
    return {rec.bbox_r0, rec.bbox_c0, rec.bbox_r1, rec.bbox_c1};
}

double record_iou(const NucleusRecord& a, const NucleusRecord& b) {
    const std::int64_t r0 = std::min(a.bbox_r0, b.bbox_r0);
    const std::int64_t c0 = std::min(a.bbox_c0, b.bbox_c0);
    const std::int64_t r1 = std::max(a.bbox_r1, b.bbox_r1);
    const std::int64_t c1 = std::max(a.bbox_c1, b.bbox_c1);
    const std::int64_t h = r1 - r0 + 1, w = c1 - c0 + 1;
    const auto ma = rasterize_record_mask(a, r0, c0, h, w);
    const auto mb = rasterize_record_mask(b, r0, c0, h, w);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        inter += ma[i] & mb[i];
        uni += ma[i] | mb[i];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace

std::vector<std::uint8_t> rasterize_record_mask(const NucleusRecord& rec, std::int64_t r0,
                                                std::int64_t c0, std::int64_t h,
                                                std::int64_t w) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w), 0);
    const auto& poly = rec.contour;
    if (poly.empty()) return mask;

    // Even-odd scanline fill of the contour polygon.
    const std::size_t k = poly.size();
    if (k >= 3) {
        std::vector<double> xs;
        for (std::int64_t row = 0; row < h; ++row) {
            const double y = static_cast<double>(row + r0);
            xs.clear();
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t j = (i + 1) % k;
                const double y0 = static_cast<double>(poly[i].first);
                const double y1 = static_cast<double>(poly[j].first);
                if ((y0 <= y && y < y1) || (y1 <= y && y < y0)) {
                    const double t = (y - y0) / (y1 - y0);
                    xs.push_back(static_cast<double>(poly[i].second) +
                                 t * (static_cast<double>(poly[j].second) -
                                      static_cast<double>(poly[i].second)));
                }
            }
            std::sort(xs.begin(), xs.end());
            for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
                const std::int64_t a = std::max<std::int64_t>(
                    0, static_cast<std::int64_t>(std::ceil(xs[i])) - c0);
                const std::int64_t b = std::min<std::int64_t>(
                    w - 1, static_cast<std::int64_t>(std::ceil(xs[i + 1])) - 1 - c0);
                for (std::int64_t c = a; c <= b; ++c)
                    mask[static_cast<std::size_t>(row * w + c)] = 1;
            }
        }
    }
    // The boundary path itself is part of the mask; this also covers
    // 1-pixel-wide shapes whose fill area is empty.
    for (const auto& [pr, pc] : poly) {
        const std::int64_t r = pr - r0, c = pc - c0;
        if (r >= 0 && c >= 0 && r < h && c < w)
            mask[static_cast<std::size_t>(r * w + c)] = 1;
    }
    return mask;
}

WsiResult merge_tiles(const std::vector<TileOutput>& per_tile, const TileGrid& grid,
                      double merge_iou, const RunParams& params) {
    if (per_tile.size() != grid.tiles.size())
        throw GridMismatch("merge_tiles: " + std::to_string(per_tile.size()) +
                           " tile outputs for " + std::to_string(grid.tiles.size()) +
                           " planned tiles");

    struct Entry {
        NucleusRecord rec; // slide coordinates
        std::size_t tile = 0;
        bool marginal = false;
        bool alive = true;
    };
    std::vector<Entry> entries;
    std::vector<std::vector<std::size_t>> tile_entries(grid.tiles.size());

    // Precompute each tile's overlap zones with its neighbours.
    std::vector<std::vector<Rect>> overlap_zones(grid.tiles.size());
    std::vector<std::vector<std::size_t>> neighbours(grid.tiles.size());
    for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
        const Rect rt = tile_rect(grid, t);
        for (std::size_t u = 0; u < grid.tiles.size(); ++u) {
            if (u == t) continue;
            const Rect ru = tile_rect(grid, u);
            if (!rt.intersects(ru)) continue;
            neighbours[t].push_back(u);
            overlap_zones[t].push_back({std::max(rt.r0, ru.r0), std::max(rt.c0, ru.c0),
                                        std::min(rt.r1, ru.r1), std::min(rt.c1, ru.c1)});
        }
    }

    for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
        const auto& [orow, ocol] = grid.tiles[t];
        for (const NucleusRecord& local : per_tile[t].records) {
            Entry e;
            e.rec = local;
            e.rec.bbox_r0 += orow;
            e.rec.bbox_r1 += orow;
            e.rec.bbox_c0 += ocol;
            e.rec.bbox_c1 += ocol;
            e.rec.centroid_r += static_cast<double>(orow);
            e.rec.centroid_c += static_cast<double>(ocol);
            for (auto& [r, c] : e.rec.contour) {
                r += orow;
                c += ocol;
            }
            e.rec.tile_origin_r = orow;
            e.rec.tile_origin_c = ocol;
            e.tile = t;
            const Rect rr = record_rect(e.rec);
            for (const Rect& zone : overlap_zones[t]) {
                if (rr.intersects(zone)) {
                    e.marginal = true;
                    break;
                }
            }
            tile_entries[t].push_back(entries.size());
            entries.push_back(std::move(e));
        }
    }

    // Pairwise duplicate resolution between marginal records of
    // neighbouring tiles, in deterministic tile/record order.
    for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
        for (std::size_t u : neighbours[t]) {
            if (u <= t) continue;
            for (std::size_t ia : tile_entries[t]) {
                Entry& a = entries[ia];
                if (!a.alive || !a.marginal) continue;
                for (std::size_t ib : tile_entries[u]) {
                    Entry& b = entries[ib];
                    if (!a.alive) break;
                    if (!b.alive || !b.marginal) continue;
                    if (!record_rect(a.rec).intersects(record_rect(b.rec))) continue;
                    if (record_iou(a.rec, b.rec) <= merge_iou) continue;
                    if (a.rec.area_px > b.rec.area_px)
                        b.alive = false;
                    else if (b.rec.area_px > a.rec.area_px)
                        a.alive = false;
                    else
                        b.alive = false; // tie: earlier raster-order tile wins
                }
            }
        }
    }

    WsiResult out;
    out.grid = grid;
    out.params = params;
    std::size_t next_id = 0;
    for (Entry& e : entries) {
        if (!e.alive) continue;
        e.rec.id = ++next_id;
        out.records.push_back(std::move(e.rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

// Records whose mask touches a tile edge that another tile covers are
// discarded: the overlap guarantees the neighbouring tile sees the whole
// nucleus, while this tile only sees a clipped fragment.
void drop_interior_edge_records(TileOutput& out, const TileGrid& grid, std::int64_t orow,
                                std::int64_t ocol) {
    const std::int64_t ts = grid.tile_size;
    const bool top_open = orow > 0;
    const bool left_open = ocol > 0;
    const bool bottom_open = orow + ts < grid.wsi_height;
    const bool right_open = ocol + ts < grid.wsi_width;
    std::vector<NucleusRecord> kept;
    kept.reserve(out.records.size());
    for (NucleusRecord& rec : out.records) {
        const bool touches = (top_open && rec.bbox_r0 == 0) || (left_open && rec.bbox_c0 == 0) ||
                             (bottom_open && rec.bbox_r1 == ts - 1) ||
                             (right_open && rec.bbox_c1 == ts - 1);
        if (!touches) kept.push_back(std::move(rec));
    }
    out.records = std::move(kept);
}

} // namespace

WsiResult run_wsi(const BundleSource& source, const TileGrid& grid, const RunParams& params) {
    std::vector<TileOutput> outputs(grid.tiles.size());
    std::atomic<std::size_t> cursor{0};
    std::mutex error_mutex;
    std::string first_error;

    auto worker = [&] {
        while (true) {
            const std::size_t t = cursor.fetch_add(1);
            if (t >= grid.tiles.size()) return;
            {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error.empty()) return;
            }
            const auto& [orow, ocol] = grid.tiles[t];
            try {
                const PredictionBundle bundle = source.bundle(orow, ocol, grid.tile_size);
                TileOutput out = process_bundle(bundle, params.postproc, params.mode);
                if (params.include_embeddings) {
                    const auto embeddings =
                        associate_embeddings(out.instances, out.tokens_final, source.patch_size());
                    for (NucleusRecord& rec : out.records)
                        if (rec.id < embeddings.size()) rec.embedding = embeddings[rec.id];
                }
                drop_interior_edge_records(out, grid, orow, ocol);
                // Maps and tokens are not needed past this point; releasing
                // them keeps peak memory at (workers) live tiles.
                out.instances.labels.clear();
                out.instances.labels.shrink_to_fit();
                out.tokens_final = TensorF32();
                outputs[t] = std::move(out);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (first_error.empty())
                    first_error = "tile at origin (" + std::to_string(orow) + "," +
                                  std::to_string(ocol) + ") failed: " + e.what();
            }
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, params.workers);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (!first_error.empty()) throw Error(first_error);

    return merge_tiles(outputs, grid, params.merge_iou, params);
}

} // namespace cellvit
