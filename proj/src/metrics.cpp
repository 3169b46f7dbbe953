#include "cellvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "cellvit/errors.hpp"
#include "detail/json_writer.hpp"

namespace cellvit {

MatchResult match_segments(const InstanceMap& gt, const InstanceMap& pred) {
    if (gt.height != pred.height || gt.width != pred.width)
        throw ShapeMismatch("match_segments: map sizes differ");

    std::vector<std::size_t> gt_area(gt.count + 1, 0), pred_area(pred.count + 1, 0);
    std::unordered_map<std::uint64_t, std::size_t> inter;
    const std::size_t n = gt.height * gt.width;
    for (std::size_t i = 0; i < n; ++i) {
        const std::int32_t g = gt.labels[i];
        const std::int32_t p = pred.labels[i];
        if (g > 0) ++gt_area[static_cast<std::size_t>(g)];
        if (p > 0) ++pred_area[static_cast<std::size_t>(p)];
        if (g > 0 && p > 0)
            ++inter[(static_cast<std::uint64_t>(g) << 32) | static_cast<std::uint32_t>(p)];
    }

    MatchResult out;
    std::vector<std::uint8_t> gt_used(gt.count + 1, 0), pred_used(pred.count + 1, 0);
    for (const auto& [key, count] : inter) {
        const auto g = static_cast<std::int32_t>(key >> 32);
        const auto p = static_cast<std::int32_t>(key & 0xFFFFFFFFu);
        const double uni = static_cast<double>(gt_area[static_cast<std::size_t>(g)] +
                                               pred_area[static_cast<std::size_t>(p)] - count);
        const double iou = uni > 0.0 ? static_cast<double>(count) / uni : 0.0;
        if (iou > 0.5) {
            out.pairs.push_back({g, p, iou, 0.0});
            gt_used[static_cast<std::size_t>(g)] = 1;
            pred_used[static_cast<std::size_t>(p)] = 1;
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const MatchResult::Pair& a, const MatchResult::Pair& b) {
                  return a.gt_id < b.gt_id;
              });
    for (std::size_t id = 1; id <= gt.count; ++id)
        if (!gt_used[id] && gt_area[id] > 0) out.unmatched_gt.push_back(static_cast<std::int32_t>(id));
    for (std::size_t id = 1; id <= pred.count; ++id)
        if (!pred_used[id] && pred_area[id] > 0)
            out.unmatched_pred.push_back(static_cast<std::int32_t>(id));
    return out;
}

PqTriple panoptic_quality(const MatchResult& match) {
    PqTriple out;
    const double tp = static_cast<double>(match.tp());
    const double fp = static_cast<double>(match.fp());
    const double fn = static_cast<double>(match.fn());
    if (tp == 0.0 && fp == 0.0 && fn == 0.0) {
        out.pq = out.dq = out.sq = 1.0;
        out.empty_convention = true;
        return out;
    }
    if (tp == 0.0) return out; // dq = sq = pq = 0
    double iou_sum = 0.0;
    for (const auto& p : match.pairs) iou_sum += p.iou;
    out.dq = tp / (tp + 0.5 * fp + 0.5 * fn);
    out.sq = iou_sum / tp;
    out.pq = out.dq * out.sq;
    return out;
}

InstanceMap filter_by_class(const InstanceMap& inst, std::size_t cls) {
    InstanceMap out = inst;
    for (std::int32_t& v : out.labels) {
        if (v > 0 && (static_cast<std::size_t>(v) >= inst.classes.size() ||
                      inst.classes[static_cast<std::size_t>(v)] != cls))
            v = 0;
    }
    return out;
}

void PqAccumulator::add(const InstanceMap& gt, const InstanceMap& pred,
                        std::size_t num_classes) {
    any_image_ = true;
    const MatchResult bin = match_segments(gt, pred);
    binary_.tp += bin.tp();
    binary_.fp += bin.fp();
    binary_.fn += bin.fn();
    for (const auto& p : bin.pairs) binary_.iou_sum += p.iou;
    binary_.seen = binary_.seen || gt.count > 0 || pred.count > 0;

    for (std::size_t cls = 1; cls < num_classes; ++cls) {
        const InstanceMap gt_c = filter_by_class(gt, cls);
        const InstanceMap pred_c = filter_by_class(pred, cls);
        bool gt_present = false, pred_present = false;
        for (std::int32_t v : gt_c.labels) gt_present = gt_present || v > 0;
        for (std::int32_t v : pred_c.labels) pred_present = pred_present || v > 0;

        Tally& t = classes_[cls];
        t.seen = t.seen || gt_present || pred_present;
        const MatchResult m = match_segments(gt_c, pred_c);
        t.tp += m.tp();
        t.fp += m.fp();
        t.fn += m.fn();
        for (const auto& p : m.pairs) t.iou_sum += p.iou;
    }
}

PqTriple PqAccumulator::finalize(const Tally& t) {
    PqTriple out;
    const double tp = static_cast<double>(t.tp);
    if (t.tp == 0 && t.fp == 0 && t.fn == 0) {
        out.pq = out.dq = out.sq = 1.0;
        out.empty_convention = true;
        return out;
    }
    if (t.tp == 0) return out;
    out.dq = tp / (tp + 0.5 * static_cast<double>(t.fp) + 0.5 * static_cast<double>(t.fn));
    out.sq = t.iou_sum / tp;
    out.pq = out.dq * out.sq;
    return out;
}

PqTriple PqAccumulator::binary() const { return finalize(binary_); }

std::map<std::size_t, PqTriple> PqAccumulator::per_class() const {
    std::map<std::size_t, PqTriple> out;
    for (const auto& [cls, tally] : classes_)
        if (tally.seen) out[cls] = finalize(tally);
    return out;
}

double PqAccumulator::mean_pq() const {
    const auto classes = per_class();
    if (classes.empty()) return binary().pq;
    double sum = 0.0;
    for (const auto& [cls, triple] : classes) sum += triple.pq;
    return sum / static_cast<double>(classes.size());
}

MulticlassPq multiclass_pq(const InstanceMap& gt, const InstanceMap& pred,
                           std::size_t num_classes) {
    PqAccumulator acc;
    acc.add(gt, pred, num_classes);
    MulticlassPq out;
    out.bpq = acc.binary().pq;
    out.per_class = acc.per_class();
    out.mpq = acc.mean_pq();
    return out;
}

MatchResult match_centroids(const std::vector<NucleusRecord>& gt,
                            const std::vector<NucleusRecord>& pred, double radius_px) {
    struct Cand {
        double dist;
        std::size_t gi, pi;
    };
    std::vector<Cand> cands;
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
        for (std::size_t pi = 0; pi < pred.size(); ++pi) {
            const double dr = gt[gi].centroid_r - pred[pi].centroid_r;
            const double dc = gt[gi].centroid_c - pred[pi].centroid_c;
            const double dist = std::sqrt(dr * dr + dc * dc);
            if (dist <= radius_px) cands.push_back({dist, gi, pi});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.gi != b.gi) return a.gi < b.gi;
        return a.pi < b.pi;
    });

    MatchResult out;
    std::vector<std::uint8_t> gt_used(gt.size(), 0), pred_used(pred.size(), 0);
    for (const Cand& c : cands) {
        if (gt_used[c.gi] || pred_used[c.pi]) continue;
        gt_used[c.gi] = 1;
        pred_used[c.pi] = 1;
        out.pairs.push_back({static_cast<std::int32_t>(gt[c.gi].id),
                             static_cast<std::int32_t>(pred[c.pi].id), 0.0, c.dist});
    }
    for (std::size_t gi = 0; gi < gt.size(); ++gi)
        if (!gt_used[gi]) out.unmatched_gt.push_back(static_cast<std::int32_t>(gt[gi].id));
    for (std::size_t pi = 0; pi < pred.size(); ++pi)
        if (!pred_used[pi]) out.unmatched_pred.push_back(static_cast<std::int32_t>(pred[pi].id));
    return out;
}

DetectionScores detection_scores(const MatchResult& match) {
    const double tp = static_cast<double>(match.tp());
    const double fp = static_cast<double>(match.fp());
    const double fn = static_cast<double>(match.fn());
    DetectionScores out;
    if (tp == 0.0 && fp == 0.0 && fn == 0.0) {
        out.precision = out.recall = out.f1 = 1.0;
        return out;
    }
    out.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    out.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    out.f1 = 2.0 * tp + fp + fn > 0.0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    return out;
}

DetectionScores classification_scores(const MatchResult& match,
                                      const std::map<std::int32_t, std::size_t>& gt_classes,
                                      const std::map<std::int32_t, std::size_t>& pred_classes,
                                      std::size_t cls) {
    double tp_c = 0.0, tn_c = 0.0, fp_c = 0.0, fn_c = 0.0;
    for (const auto& pair : match.pairs) {
        const std::size_t g = gt_classes.at(pair.gt_id);
        const std::size_t p = pred_classes.at(pair.pred_id);
        if (g == cls && p == cls)
            tp_c += 1.0;
        else if (g != cls && p != cls)
            tn_c += 1.0;
        else if (g != cls && p == cls)
            fp_c += 1.0;
        else
            fn_c += 1.0;
    }
    const double fp_d = static_cast<double>(match.fp());
    const double fn_d = static_cast<double>(match.fn());
    const double hit = tp_c + tn_c;

    DetectionScores out;
    if (hit == 0.0 && fp_c == 0.0 && fn_c == 0.0 && fp_d == 0.0 && fn_d == 0.0) {
        out.precision = out.recall = out.f1 = 1.0;
        return out;
    }
    const double f1_den = 2.0 * hit + 2.0 * fp_c + 2.0 * fn_c + fp_d + fn_d;
    const double p_den = hit + 2.0 * fp_c + fp_d;
    const double r_den = hit + 2.0 * fn_c + fn_d;
    out.f1 = f1_den > 0.0 ? 2.0 * hit / f1_den : 0.0;
    out.precision = p_den > 0.0 ? hit / p_den : 0.0;
    out.recall = r_den > 0.0 ? hit / r_den : 0.0;
    return out;
}

std::string MetricReport::to_json() const {
    detail::JsonWriter w;
    w.raw("{");
    w.key("bpq");
    w.fixed(bpq, 6);
    w.raw(",");
    w.key("detection");
    w.raw("{");
    w.key("f1");
    w.fixed(detection.f1, 6);
    w.raw(",");
    w.key("precision");
    w.fixed(detection.precision, 6);
    w.raw(",");
    w.key("recall");
    w.fixed(detection.recall, 6);
    w.raw("},");
    w.key("empty_convention_used");
    w.raw(empty_convention_used ? "true" : "false");
    w.raw(",");
    w.key("mpq");
    w.fixed(mpq, 6);
    w.raw(",");
    w.key("per_class");
    w.raw("{");
    bool first = true;
    for (const auto& [cls, m] : per_class) {
        if (!first) w.raw(",");
        first = false;
        w.key(std::to_string(cls).c_str());
        w.raw("{");
        w.key("dq");
        w.fixed(m.dq, 6);
        w.raw(",");
        w.key("f1");
        w.fixed(m.f1, 6);
        w.raw(",");
        w.key("pq");
        w.fixed(m.pq, 6);
        w.raw(",");
        w.key("precision");
        w.fixed(m.precision, 6);
        w.raw(",");
        w.key("recall");
        w.fixed(m.recall, 6);
        w.raw(",");
        w.key("sq");
        w.fixed(m.sq, 6);
        w.raw("}");
    }
    w.raw("}}");
    return w.take();
}

MetricReport evaluate_instance_maps(const std::vector<const InstanceMap*>& gt,
                                    const std::vector<const InstanceMap*>& pred,
                                    std::size_t num_classes, double radius_px) {
    if (gt.size() != pred.size())
        throw ShapeMismatch("evaluate_instance_maps: gt/pred image counts differ");

    PqAccumulator acc;
    std::size_t det_tp = 0, det_fp = 0, det_fn = 0;
    struct ClassTally {
        double tp = 0, tn = 0, fp = 0, fn = 0;
        bool seen = false;
    };
    std::map<std::size_t, ClassTally> cls_tally;
    std::size_t fp_d_total = 0, fn_d_total = 0;
    bool any_empty_convention = false;

    for (std::size_t img = 0; img < gt.size(); ++img) {
        acc.add(*gt[img], *pred[img], num_classes);

        const auto gt_records = extract_records(*gt[img]);
        const auto pred_records = extract_records(*pred[img]);
        const MatchResult m = match_centroids(gt_records, pred_records, radius_px);
        det_tp += m.tp();
        det_fp += m.fp();
        det_fn += m.fn();
        fp_d_total += m.fp();
        fn_d_total += m.fn();

        std::map<std::int32_t, std::size_t> gcls, pcls;
        for (const auto& r : gt_records) gcls[static_cast<std::int32_t>(r.id)] = r.class_id;
        for (const auto& r : pred_records) pcls[static_cast<std::int32_t>(r.id)] = r.class_id;
        for (std::size_t cls = 1; cls < num_classes; ++cls) {
            ClassTally& t = cls_tally[cls];
            for (const auto& pair : m.pairs) {
                const std::size_t g = gcls.at(pair.gt_id);
                const std::size_t p = pcls.at(pair.pred_id);
                t.seen = t.seen || g == cls || p == cls;
                if (g == cls && p == cls)
                    t.tp += 1.0;
                else if (g != cls && p != cls)
                    t.tn += 1.0;
                else if (p == cls)
                    t.fp += 1.0;
                else
                    t.fn += 1.0;
            }
            for (const auto& r : gt_records) t.seen = t.seen || r.class_id == cls;
            for (const auto& r : pred_records) t.seen = t.seen || r.class_id == cls;
        }
    }

    MetricReport report;
    const PqTriple bpq = acc.binary();
    report.bpq = bpq.pq;
    report.mpq = acc.mean_pq();
    any_empty_convention = any_empty_convention || bpq.empty_convention;

    {
        MatchResult det;
        det.pairs.resize(det_tp);
        det.unmatched_pred.resize(det_fp);
        det.unmatched_gt.resize(det_fn);
        report.detection = detection_scores(det);
    }

    const auto per_class_pq = acc.per_class();
    for (const auto& [cls, triple] : per_class_pq) {
        ClassMetrics cm;
        cm.pq = triple.pq;
        cm.dq = triple.dq;
        cm.sq = triple.sq;
        any_empty_convention = any_empty_convention || triple.empty_convention;
        const auto it = cls_tally.find(cls);
        if (it != cls_tally.end()) {
            const ClassTally& t = it->second;
            const double hit = t.tp + t.tn;
            const double fpd = static_cast<double>(fp_d_total);
            const double fnd = static_cast<double>(fn_d_total);
            if (hit == 0.0 && t.fp == 0.0 && t.fn == 0.0 && fpd == 0.0 && fnd == 0.0) {
                cm.precision = cm.recall = cm.f1 = 1.0;
            } else {
                const double f1_den = 2.0 * hit + 2.0 * t.fp + 2.0 * t.fn + fpd + fnd;
                const double p_den = hit + 2.0 * t.fp + fpd;
                const double r_den = hit + 2.0 * t.fn + fnd;
                cm.f1 = f1_den > 0.0 ? 2.0 * hit / f1_den : 0.0;
                cm.precision = p_den > 0.0 ? hit / p_den : 0.0;
                cm.recall = r_den > 0.0 ? hit / r_den : 0.0;
            }
        }
        report.per_class[cls] = cm;
    }
    report.empty_convention_used = any_empty_convention;
    return report;
}

} // namespace cellvit
