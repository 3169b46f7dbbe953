#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cellvit/model.hpp"
#include "cellvit/tensor.hpp"

namespace cellvit {

/// Integer label image: 0 = background, ids 1..count contiguous. `classes`
/// is indexed by instance id (entry 0 unused).
struct InstanceMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> labels;
    std::vector<std::size_t> classes;
    std::size_t count = 0;

    std::int32_t label(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
    std::int32_t& label(std::size_t r, std::size_t c) { return labels[r * width + c]; }
};

struct PostprocParams {
    float np_threshold = 0.5f;     // foreground cut on the nucleus channel
    float edge_threshold = 0.4f;   // gradient cut separating markers
    std::size_t min_marker_px = 10;
    std::size_t min_instance_px = 10;
    std::size_t unknown_class = 255; // assigned when voting finds no nucleus class
    float prob_threshold = 0.5f;   // star-polygon candidate cut
    float nms_threshold = 0.3f;    // IoU above which a candidate is suppressed
    std::size_t rays = 32;
};

/// HoVer-Net nuclei separation: threshold the NP map, detect HV-gradient
/// ridges with Sobel filters, erode them out of the foreground to obtain
/// markers, and grow the markers back over the foreground with a
/// marker-controlled watershed on the gradient energy. Instances smaller
/// than min_instance_px are removed and ids relabelled contiguously.
InstanceMap hovernet_separate(const PredictionBundle& bundle, const PostprocParams& params);

/// Assigns each instance the modal argmax class of nt_map over its pixels.
/// Ties break toward the lower class id; the background class (0) is never
/// assigned — the next most frequent nucleus class wins, or unknown_class
/// when the instance has no nucleus-class votes at all.
InstanceMap majority_vote_types(const InstanceMap& inst, const TensorF32& nt_map,
                                std::size_t unknown_class = 255);

/// One star-convex candidate: center pixel, object probability and K radial
/// distances along equiangular rays.
struct StarCandidate {
    float row = 0.0f;
    float col = 0.0f;
    float prob = 0.0f;
    std::vector<float> radii;
};

struct StarPolygonSet {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t rays = 0;
    std::vector<StarCandidate> candidates;
};

/// Fills the star polygon with vertices center + r_k * (cos t_k, sin t_k),
/// t_k = 2 pi k / K, by even-odd scanline over lattice points, clipped to
/// the (height, width) image. Throws BadRayCount for K < 3.
std::vector<std::uint8_t> rasterize_star_polygon(float center_row, float center_col,
                                                 const std::vector<float>& radii,
                                                 std::size_t height, std::size_t width);

/// Greedy probability-ordered NMS over rasterized polygons; a candidate is
/// suppressed when its IoU with an already accepted candidate exceeds
/// nms_thresh. Survivors are rasterized in acceptance order and never
/// overwrite earlier pixels.
InstanceMap stardist_nms(const StarPolygonSet& polys, float prob_thresh, float nms_thresh);

/// Same mechanics as stardist_nms; the set is expected to carry refined
/// radial distances supplied by the caller.
InstanceMap cppnet_nms(const StarPolygonSet& polys, float prob_thresh, float nms_thresh);

/// Derives a candidate set from an NP map: every pixel at or above
/// prob_thresh becomes a candidate whose radii are ray-cast distances to
/// the thresholded foreground boundary.
StarPolygonSet star_candidates_from_np(const TensorF32& np_map, float prob_thresh,
                                       std::size_t rays);

/// One detected nucleus. Coordinates are tile-local until the pipeline
/// shifts them to slide coordinates. The contour is an open polygon
/// (closure appended on export); embedding is empty when not extracted.
struct NucleusRecord {
    std::size_t id = 0;
    std::size_t class_id = 0;
    std::int64_t bbox_r0 = 0, bbox_c0 = 0, bbox_r1 = 0, bbox_c1 = 0; // inclusive
    double centroid_r = 0.0, centroid_c = 0.0;
    std::vector<std::pair<std::int64_t, std::int64_t>> contour; // (row, col)
    std::vector<float> embedding;
    std::int64_t tile_origin_r = 0, tile_origin_c = 0;
    std::int64_t area_px = 0;
};

/// Per-instance tight bbox, centroid (unweighted pixel mean) and clockwise
/// Moore boundary contour starting at the topmost-then-leftmost boundary
/// pixel.
std::vector<NucleusRecord> extract_records(const InstanceMap& inst);

/// 4-connected components of a binary mask; returns (labels, count).
std::pair<std::vector<std::int32_t>, std::size_t>
connected_components(const std::vector<std::uint8_t>& mask, std::size_t height, std::size_t width);

} // namespace cellvit
