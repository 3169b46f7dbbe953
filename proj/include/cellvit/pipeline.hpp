#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cellvit/model.hpp"
#include "cellvit/postproc.hpp"

namespace cellvit {

/// Tile plan over a slide: raster-order full-size tiles at stride
/// tile_size - overlap, edge tiles shifted inward to stay full-size.
struct TileGrid {
    std::int64_t wsi_width = 0;
    std::int64_t wsi_height = 0;
    std::int64_t tile_size = 1024;
    std::int64_t overlap = 64;
    std::vector<std::pair<std::int64_t, std::int64_t>> tiles; // (origin_row, origin_col)

    std::int64_t stride() const { return tile_size - overlap; }
    /// Total pixels fed through the model: tiles * tile_size^2.
    std::int64_t processed_pixels() const {
        return static_cast<std::int64_t>(tiles.size()) * tile_size * tile_size;
    }
};

/// Throws OverlapTooLarge when overlap >= tile_size.
TileGrid plan_tiles(std::int64_t wsi_w, std::int64_t wsi_h, std::int64_t tile_size,
                    std::int64_t overlap);

/// Supplier of raw tile pixels in slide coordinates.
class TileImageSource {
public:
    virtual ~TileImageSource() = default;
    virtual TensorF32 tile(std::int64_t origin_r, std::int64_t origin_c,
                           std::int64_t tile_size) const = 0;
    virtual std::size_t channels() const = 0;
};

/// Deterministic procedural texture, used by the benchmark and tests in
/// place of slide data.
class SyntheticTileSource : public TileImageSource {
public:
    SyntheticTileSource(std::int64_t wsi_w, std::int64_t wsi_h, std::uint64_t seed);
    TensorF32 tile(std::int64_t origin_r, std::int64_t origin_c,
                   std::int64_t tile_size) const override;
    std::size_t channels() const override { return 3; }

private:
    std::int64_t width_, height_;
    std::uint64_t seed_;
};

/// Reads tiles from a manifest-described directory of CVTF files.
/// Throws GridMismatch when the requested geometry does not match the
/// manifest.
class DirectoryTileSource : public TileImageSource {
public:
    explicit DirectoryTileSource(const std::string& manifest_path);
    TensorF32 tile(std::int64_t origin_r, std::int64_t origin_c,
                   std::int64_t tile_size) const override;
    std::size_t channels() const override { return channels_; }

    std::int64_t wsi_width() const { return wsi_width_; }
    std::int64_t wsi_height() const { return wsi_height_; }
    std::int64_t tile_size() const { return tile_size_; }
    std::int64_t overlap() const { return overlap_; }
    double mpp() const { return mpp_; }

private:
    std::string dir_;
    std::int64_t wsi_width_ = 0, wsi_height_ = 0, tile_size_ = 0, overlap_ = 0;
    double mpp_ = 0.25;
    std::size_t channels_ = 3;
    std::vector<std::pair<std::pair<std::int64_t, std::int64_t>, std::string>> files_;
};

/// Supplier of per-tile model outputs; lets tests and fixtures inject ideal
/// bundles without a forward pass.
class BundleSource {
public:
    virtual ~BundleSource() = default;
    virtual PredictionBundle bundle(std::int64_t origin_r, std::int64_t origin_c,
                                    std::int64_t tile_size) const = 0;
    virtual std::size_t patch_size() const = 0;
};

/// Runs the model forward pass over tiles of an image source.
class ModelBundleSource : public BundleSource {
public:
    ModelBundleSource(const TileImageSource& tiles, const Weights& weights,
                      const ModelConfig& cfg)
        : tiles_(tiles), weights_(weights), cfg_(cfg) {}
    PredictionBundle bundle(std::int64_t origin_r, std::int64_t origin_c,
                            std::int64_t tile_size) const override;
    std::size_t patch_size() const override { return cfg_.patch_size; }

private:
    const TileImageSource& tiles_;
    const Weights& weights_;
    const ModelConfig& cfg_;
};

/// Ground-truth scene of synthetic elliptical nuclei in slide coordinates;
/// emits ideal NP/HV/NT maps per tile.
struct SyntheticNucleus {
    double center_r = 0.0, center_c = 0.0;
    double radius_r = 4.0, radius_c = 4.0;
    std::size_t class_id = 1;
};

class SyntheticScene {
public:
    SyntheticScene(std::int64_t wsi_w, std::int64_t wsi_h, std::size_t num_nuclei_classes)
        : width_(wsi_w), height_(wsi_h), classes_(num_nuclei_classes) {}

    /// Seeded random non-touching nuclei with radii in [r_min, r_max].
    static SyntheticScene random(std::int64_t wsi_w, std::int64_t wsi_h, std::size_t count,
                                 std::uint64_t seed, double r_min = 4.0, double r_max = 10.0,
                                 std::size_t num_nuclei_classes = 6);

    void add(const SyntheticNucleus& n) { nuclei_.push_back(n); }
    const std::vector<SyntheticNucleus>& nuclei() const { return nuclei_; }
    std::int64_t width() const { return width_; }
    std::int64_t height() const { return height_; }
    std::size_t num_classes() const { return classes_; }

    /// Ideal bundle for a tile: NP one-hot, per-instance normalized HV,
    /// one-hot NT; token embeddings deterministic per token index.
    PredictionBundle ideal_bundle(std::int64_t origin_r, std::int64_t origin_c,
                                  std::int64_t tile_size, std::size_t patch_size) const;

    /// Ground-truth instance map of a window, instance ids local 1..k.
    InstanceMap window_truth(std::int64_t origin_r, std::int64_t origin_c, std::int64_t h,
                             std::int64_t w) const;

private:
    std::int64_t width_, height_;
    std::size_t classes_;
    std::vector<SyntheticNucleus> nuclei_;
};

class SyntheticBundleSource : public BundleSource {
public:
    SyntheticBundleSource(const SyntheticScene& scene, std::size_t patch_size)
        : scene_(scene), patch_(patch_size) {}
    PredictionBundle bundle(std::int64_t origin_r, std::int64_t origin_c,
                            std::int64_t tile_size) const override {
        return scene_.ideal_bundle(origin_r, origin_c, tile_size, patch_);
    }
    std::size_t patch_size() const override { return patch_; }

private:
    const SyntheticScene& scene_;
    std::size_t patch_;
};

enum class SegMode { hovernet, stardist, cppnet };

struct RunParams {
    PostprocParams postproc;
    SegMode mode = SegMode::hovernet;
    std::size_t workers = 1;
    bool include_embeddings = false;
    double merge_iou = 0.25;
    double mpp = 0.25;
    std::string model_name = "cellvit";
};

struct WsiResult {
    std::vector<NucleusRecord> records;
    TileGrid grid;
    RunParams params;
};

struct TileOutput {
    InstanceMap instances;
    std::vector<NucleusRecord> records; // tile-local coordinates
    TensorF32 tokens_final;
};

/// forward -> selected postprocessing -> record extraction, tile-local.
TileOutput process_tile(const TensorF32& tile_image, const Weights& weights,
                        const ModelConfig& cfg, const PostprocParams& params, SegMode mode);

/// Postprocessing half of process_tile, reusable with injected bundles.
TileOutput process_bundle(const PredictionBundle& bundle, const PostprocParams& params,
                          SegMode mode);

/// Mean of the final-block token vectors whose P x P footprint intersects
/// each instance; summed in token raster order, so power-of-two counts stay
/// exact. Result indexed by instance id (entry 0 empty).
std::vector<std::vector<float>> associate_embeddings(const InstanceMap& inst,
                                                     const TensorF32& tokens_final,
                                                     std::size_t patch_size);

/// Shifts per-tile records into slide coordinates and resolves seam
/// duplicates: records whose bbox intersects a neighbouring tile are
/// compared pairwise by contour-mask IoU; above merge_iou the larger-area
/// record survives (ties go to the lower raster-order tile). Survivors get
/// contiguous global ids.
WsiResult merge_tiles(const std::vector<TileOutput>& per_tile, const TileGrid& grid,
                      double merge_iou, const RunParams& params);

/// plan -> process tiles on a bounded worker pool -> merge. Peak memory
/// holds per-worker tile maps plus the record lists, never whole-slide maps.
WsiResult run_wsi(const BundleSource& source, const TileGrid& grid, const RunParams& params);

/// Rasterizes a record's contour polygon (even-odd fill plus the boundary
/// pixels) into a window anchored at (r0, c0).
std::vector<std::uint8_t> rasterize_record_mask(const NucleusRecord& rec, std::int64_t r0,
                                                std::int64_t c0, std::int64_t h, std::int64_t w);

} // namespace cellvit
