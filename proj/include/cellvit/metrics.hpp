#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cellvit/postproc.hpp"

namespace cellvit {

/// Matching between ground-truth and predicted instances. For segment
/// matching `iou` carries the pair IoU; for centroid matching `distance`
/// carries the centroid distance.
struct MatchResult {
    struct Pair {
        std::int32_t gt_id = 0;
        std::int32_t pred_id = 0;
        double iou = 0.0;
        double distance = 0.0;
    };
    std::vector<Pair> pairs;
    std::vector<std::int32_t> unmatched_gt;
    std::vector<std::int32_t> unmatched_pred;

    std::size_t tp() const { return pairs.size(); }
    std::size_t fp() const { return unmatched_pred.size(); }
    std::size_t fn() const { return unmatched_gt.size(); }
};

/// All (gt, pred) pairs with IoU > 0.5; the threshold makes the matching
/// unique, so no assignment step is needed.
MatchResult match_segments(const InstanceMap& gt, const InstanceMap& pred);

struct PqTriple {
    double pq = 0.0;
    double dq = 0.0;
    double sq = 0.0;
    bool empty_convention = false; // no gt and no pred: scored 1 by convention
};

/// dq = TP / (TP + FP/2 + FN/2); sq = mean matched IoU; pq = dq * sq.
PqTriple panoptic_quality(const MatchResult& match);

/// Set-level PQ aggregation: per-class TP/FP/FN and IoU sums are summed
/// over every added image pair first, then turned into PQ values.
class PqAccumulator {
public:
    /// Accumulates one image: binary PQ over labels as-is plus per-class PQ
    /// over class-filtered maps for classes 1..num_classes-1.
    void add(const InstanceMap& gt, const InstanceMap& pred, std::size_t num_classes);

    PqTriple binary() const;
    /// Classes absent from both gt and pred across the whole set are
    /// excluded from the map and from the mean.
    std::map<std::size_t, PqTriple> per_class() const;
    double mean_pq() const;

private:
    struct Tally {
        std::size_t tp = 0, fp = 0, fn = 0;
        double iou_sum = 0.0;
        bool seen = false;
    };
    static PqTriple finalize(const Tally& t);
    Tally binary_;
    std::map<std::size_t, Tally> classes_;
    bool any_image_ = false;
};

struct MulticlassPq {
    double bpq = 0.0;
    double mpq = 0.0;
    std::map<std::size_t, PqTriple> per_class;
};

/// Single-pair convenience wrapper over PqAccumulator.
MulticlassPq multiclass_pq(const InstanceMap& gt, const InstanceMap& pred,
                           std::size_t num_classes);

/// Keeps only instances of class `cls`; labels keep their ids.
InstanceMap filter_by_class(const InstanceMap& inst, std::size_t cls);

/// Greedy nearest-distance-first bipartite matching of record centroids
/// within `radius_px`; each record matches at most once.
MatchResult match_centroids(const std::vector<NucleusRecord>& gt,
                            const std::vector<NucleusRecord>& pred, double radius_px);

struct DetectionScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// F1 = 2TP/(2TP+FP+FN). All-empty inputs score 1; otherwise a zero
/// denominator scores 0.
DetectionScores detection_scores(const MatchResult& match);

/// Per-class detection breakdown over matched pairs, including the
/// correctly-matched-other-class term TN_c:
///   F1_c = 2(TP_c+TN_c) / (2(TP_c+TN_c) + 2FP_c + 2FN_c + FP_d + FN_d)
///   P_c  = (TP_c+TN_c) / (TP_c+TN_c + 2FP_c + FP_d)
///   R_c  = (TP_c+TN_c) / (TP_c+TN_c + 2FN_c + FN_d)
DetectionScores classification_scores(const MatchResult& match,
                                      const std::map<std::int32_t, std::size_t>& gt_classes,
                                      const std::map<std::int32_t, std::size_t>& pred_classes,
                                      std::size_t cls);

struct ClassMetrics {
    double pq = 0.0, dq = 0.0, sq = 0.0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricReport {
    double bpq = 0.0;
    double mpq = 0.0;
    DetectionScores detection;
    std::map<std::size_t, ClassMetrics> per_class;
    bool empty_convention_used = false;

    /// Deterministic JSON: sorted keys, fixed 6-decimal floats.
    std::string to_json() const;
};

/// Full evaluation of one or more (gt, pred) instance-map pairs: set-level
/// PQ family plus centroid-radius detection and per-class classification.
MetricReport evaluate_instance_maps(const std::vector<const InstanceMap*>& gt,
                                    const std::vector<const InstanceMap*>& pred,
                                    std::size_t num_classes, double radius_px);

} // namespace cellvit
