#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cellvit/errors.hpp"
#include "cellvit/postproc.hpp"

namespace cellvit {

std::vector<std::uint8_t> rasterize_star_polygon(float center_row, float center_col,
                                                 const std::vector<float>& radii,
                                                 std::size_t height, std::size_t width) {
    const std::size_t k = radii.size();
    if (k < 3) throw BadRayCount("star polygon needs at least 3 rays, got " + std::to_string(k));

    std::vector<std::uint8_t> mask(height * width, 0);

    std::vector<double> vr(k), vc(k);
    bool degenerate = true;
    for (std::size_t i = 0; i < k; ++i) {
        const double theta = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(k);
        vr[i] = center_row + radii[i] * std::cos(theta);
        vc[i] = center_col + radii[i] * std::sin(theta);
        degenerate = degenerate && radii[i] < 0.5f;
    }
    if (degenerate) {
        // All radii collapse onto the center; mark the center pixel if inside.
        const auto r = static_cast<std::ptrdiff_t>(std::lround(center_row));
        const auto c = static_cast<std::ptrdiff_t>(std::lround(center_col));
        if (r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(height) &&
            c < static_cast<std::ptrdiff_t>(width))
            mask[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)] = 1;
        return mask;
    }

    double min_r = vr[0], max_r = vr[0];
    for (double v : vr) {
        min_r = std::min(min_r, v);
        max_r = std::max(max_r, v);
    }
    const std::ptrdiff_t row_lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(min_r)));
    const std::ptrdiff_t row_hi =
        std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(height) - 1,
                                 static_cast<std::ptrdiff_t>(std::floor(max_r)));

    std::vector<double> xs;
    for (std::ptrdiff_t row = row_lo; row <= row_hi; ++row) {
        xs.clear();
        const double y = static_cast<double>(row);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = (i + 1) % k;
            const double y0 = vr[i], y1 = vr[j];
            if ((y0 <= y && y < y1) || (y1 <= y && y < y0)) {
                const double t = (y - y0) / (y1 - y0);
                xs.push_back(vc[i] + t * (vc[j] - vc[i]));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            const std::ptrdiff_t c0 =
                std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(xs[i])));
            const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(
                static_cast<std::ptrdiff_t>(width) - 1,
                static_cast<std::ptrdiff_t>(std::ceil(xs[i + 1])) - 1);
            for (std::ptrdiff_t c = c0; c <= c1; ++c)
                mask[static_cast<std::size_t>(row) * width + static_cast<std::size_t>(c)] = 1;
        }
    }
    return mask;
}

namespace {

struct Accepted {
    std::vector<std::uint8_t> mask;
    std::size_t area = 0;
    std::ptrdiff_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;
};

void mask_bbox(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w, Accepted& a) {
    a.r0 = static_cast<std::ptrdiff_t>(h);
    a.c0 = static_cast<std::ptrdiff_t>(w);
    a.r1 = -1;
    a.c1 = -1;
    a.area = 0;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (!mask[r * w + c]) continue;
            ++a.area;
            a.r0 = std::min(a.r0, static_cast<std::ptrdiff_t>(r));
            a.c0 = std::min(a.c0, static_cast<std::ptrdiff_t>(c));
            a.r1 = std::max(a.r1, static_cast<std::ptrdiff_t>(r));
            a.c1 = std::max(a.c1, static_cast<std::ptrdiff_t>(c));
        }
    }
}

double mask_iou(const Accepted& a, const Accepted& b, std::size_t w) {
    if (a.area == 0 || b.area == 0) return 0.0;
    if (a.r1 < b.r0 || b.r1 < a.r0 || a.c1 < b.c0 || b.c1 < a.c0) return 0.0;
    const std::ptrdiff_t r0 = std::max(a.r0, b.r0), r1 = std::min(a.r1, b.r1);
    const std::ptrdiff_t c0 = std::max(a.c0, b.c0), c1 = std::min(a.c1, b.c1);
    std::size_t inter = 0;
    for (std::ptrdiff_t r = r0; r <= r1; ++r)
        for (std::ptrdiff_t c = c0; c <= c1; ++c)
            inter += a.mask[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] &
                     b.mask[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
    const std::size_t uni = a.area + b.area - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

InstanceMap greedy_nms(const StarPolygonSet& polys, float prob_thresh, float nms_thresh) {
    if (polys.rays < 3)
        throw BadRayCount("star polygon set needs at least 3 rays, got " +
                          std::to_string(polys.rays));
    const std::size_t h = polys.height, w = polys.width;

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < polys.candidates.size(); ++i)
        if (polys.candidates[i].prob >= prob_thresh) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return polys.candidates[a].prob > polys.candidates[b].prob;
    });

    std::vector<Accepted> accepted;
    for (std::size_t idx : order) {
        const StarCandidate& cand = polys.candidates[idx];
        Accepted a;
        a.mask = rasterize_star_polygon(cand.row, cand.col, cand.radii, h, w);
        mask_bbox(a.mask, h, w, a);
        if (a.area == 0) continue;
        bool suppressed = false;
        for (const Accepted& kept : accepted) {
            if (mask_iou(a, kept, w) > nms_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) accepted.push_back(std::move(a));
    }

    InstanceMap out;
    out.height = h;
    out.width = w;
    out.labels.assign(h * w, 0);
    std::int32_t next = 0;
    for (const Accepted& a : accepted) {
        const std::int32_t id = ++next;
        bool wrote = false;
        for (std::ptrdiff_t r = a.r0; r <= a.r1; ++r) {
            for (std::ptrdiff_t c = a.c0; c <= a.c1; ++c) {
                const std::size_t p = static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
                if (a.mask[p] && out.labels[p] == 0) {
                    out.labels[p] = id;
                    wrote = true;
                }
            }
        }
        if (!wrote) --next; // fully shadowed by earlier polygons
    }

    // Compact: polygons that lost all pixels to earlier ones left id gaps.
    std::vector<std::int32_t> remap(static_cast<std::size_t>(next) + 1, 0);
    for (std::int32_t v : out.labels)
        if (v > 0) remap[static_cast<std::size_t>(v)] = 1;
    std::int32_t compacted = 0;
    for (std::size_t id = 1; id < remap.size(); ++id)
        if (remap[id]) remap[id] = ++compacted;
    for (std::int32_t& v : out.labels)
        if (v > 0) v = remap[static_cast<std::size_t>(v)];

    out.count = static_cast<std::size_t>(compacted);
    out.classes.assign(out.count + 1, 0);
    return out;
}

} // namespace

InstanceMap stardist_nms(const StarPolygonSet& polys, float prob_thresh, float nms_thresh) {
    return greedy_nms(polys, prob_thresh, nms_thresh);
}

InstanceMap cppnet_nms(const StarPolygonSet& polys, float prob_thresh, float nms_thresh) {
    return greedy_nms(polys, prob_thresh, nms_thresh);
}

StarPolygonSet star_candidates_from_np(const TensorF32& np_map, float prob_thresh,
                                       std::size_t rays) {
    if (np_map.rank() != 3 || np_map.extent(2) != 2)
        throw ShapeMismatch("star_candidates_from_np expects (H, W, 2), got " +
                            np_map.shape_str());
    if (rays < 3) throw BadRayCount("ray count must be >= 3");
    const std::size_t h = np_map.extent(0), w = np_map.extent(1);

    std::vector<std::uint8_t> fg(h * w, 0);
    for (std::size_t i = 0; i < h * w; ++i)
        fg[i] = np_map[i * 2 + 1] >= prob_thresh ? 1 : 0;

    StarPolygonSet set;
    set.height = h;
    set.width = w;
    set.rays = rays;

    const float max_radius = static_cast<float>(std::max(h, w));
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (!fg[r * w + c]) continue;
            StarCandidate cand;
            cand.row = static_cast<float>(r);
            cand.col = static_cast<float>(c);
            cand.prob = np_map[(r * w + c) * 2 + 1];
            cand.radii.resize(rays);
            for (std::size_t k = 0; k < rays; ++k) {
                const double theta = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(rays);
                const double dr = std::cos(theta), dc = std::sin(theta);
                float dist = 0.0f;
                while (dist < max_radius) {
                    const double rr = r + (dist + 1.0) * dr;
                    const double cc = c + (dist + 1.0) * dc;
                    const auto ri = static_cast<std::ptrdiff_t>(std::lround(rr));
                    const auto ci = static_cast<std::ptrdiff_t>(std::lround(cc));
                    if (ri < 0 || ci < 0 || ri >= static_cast<std::ptrdiff_t>(h) ||
                        ci >= static_cast<std::ptrdiff_t>(w) ||
                        !fg[static_cast<std::size_t>(ri) * w + static_cast<std::size_t>(ci)])
                        break;
                    dist += 1.0f;
                }
                cand.radii[k] = dist;
            }
            set.candidates.push_back(std::move(cand));
        }
    }
    return set;
}

} // namespace cellvit
