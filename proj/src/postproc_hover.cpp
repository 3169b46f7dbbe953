#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "cellvit/errors.hpp"
#include "cellvit/postproc.hpp"
#include "detail/sobel.hpp"

namespace cellvit {

std::pair<std::vector<std::int32_t>, std::size_t>
connected_components(const std::vector<std::uint8_t>& mask, std::size_t height,
                     std::size_t width) {
    std::vector<std::int32_t> labels(height * width, 0);
    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (mask[start] == 0 || labels[start] != 0) continue;
        const std::int32_t id = static_cast<std::int32_t>(++count);
        labels[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const std::size_t r = p / width, c = p % width;
            const std::size_t nbr[4] = {r > 0 ? p - width : p, r + 1 < height ? p + width : p,
                                        c > 0 ? p - 1 : p, c + 1 < width ? p + 1 : p};
            for (std::size_t q : nbr) {
                if (q == p || mask[q] == 0 || labels[q] != 0) continue;
                labels[q] = id;
                stack.push_back(q);
            }
        }
    }
    return {std::move(labels), count};
}

namespace {

// Drops label ids with pixel count below min_px and renumbers the rest
// contiguously in ascending old-id order.
std::size_t filter_and_compact(std::vector<std::int32_t>& labels, std::size_t count,
                               std::size_t min_px) {
    std::vector<std::size_t> areas(count + 1, 0);
    for (std::int32_t v : labels)
        if (v > 0) ++areas[static_cast<std::size_t>(v)];
    std::vector<std::int32_t> remap(count + 1, 0);
    std::size_t next = 0;
    for (std::size_t id = 1; id <= count; ++id)
        if (areas[id] >= min_px && areas[id] > 0) remap[id] = static_cast<std::int32_t>(++next);
    for (std::int32_t& v : labels)
        if (v > 0) v = remap[static_cast<std::size_t>(v)];
    return next;
}

struct FloodEntry {
    float key; // negated energy; lower pops first
    std::uint64_t order;
    std::size_t pixel;
    bool operator>(const FloodEntry& o) const {
        if (key != o.key) return key > o.key;
        return order > o.order;
    }
};

} // namespace

InstanceMap hovernet_separate(const PredictionBundle& bundle, const PostprocParams& params) {
    const TensorF32& np = bundle.np_map;
    const TensorF32& hv = bundle.hv_map;
    if (np.rank() != 3 || np.extent(2) != 2 || hv.rank() != 3 || hv.extent(2) != 2 ||
        np.extent(0) != hv.extent(0) || np.extent(1) != hv.extent(1))
        throw ShapeMismatch("hovernet_separate: np " + np.shape_str() + " vs hv " +
                            hv.shape_str());
    const std::size_t h = np.extent(0), w = np.extent(1);
    const std::size_t n = h * w;

    std::vector<std::uint8_t> fg(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        fg[i] = np[i * 2 + 1] >= params.np_threshold ? 1 : 0;

    // Gradient magnitude of the distance maps, each direction normalized
    // to [0,1] across the tile.
    const auto sx = detail::sobel_channel(hv, 0, detail::kSobelX);
    const auto sy = detail::sobel_channel(hv, 1, detail::kSobelY);
    std::vector<float> edge(n, 0.0f);
    double max_x = 0.0, max_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        max_x = std::max(max_x, std::abs(sx[i]));
        max_y = std::max(max_y, std::abs(sy[i]));
    }
    const double inv_x = max_x > 0.0 ? 1.0 / max_x : 0.0;
    const double inv_y = max_y > 0.0 ? 1.0 / max_y : 0.0;
    for (std::size_t i = 0; i < n; ++i)
        edge[i] = static_cast<float>(std::max(std::abs(sx[i]) * inv_x, std::abs(sy[i]) * inv_y));

    std::vector<float> energy(n, 0.0f);
    for (std::size_t i = 0; i < n; ++i)
        if (fg[i]) energy[i] = 1.0f - edge[i];

    // Markers: foreground minus the gradient ridges, small fragments removed.
    std::vector<std::uint8_t> marker_mask(n, 0);
    for (std::size_t i = 0; i < n; ++i)
        marker_mask[i] = fg[i] && edge[i] < params.edge_threshold ? 1 : 0;
    auto [markers, marker_count] = connected_components(marker_mask, h, w);
    marker_count = filter_and_compact(markers, marker_count, params.min_marker_px);

    // Marker-controlled priority flood on -energy, 4-connected, restricted
    // to the foreground. Insertion order breaks priority ties so the result
    // is deterministic.
    std::vector<std::int32_t> labels(n, 0);
    std::priority_queue<FloodEntry, std::vector<FloodEntry>, std::greater<FloodEntry>> queue;
    std::uint64_t order = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (markers[i] > 0 && fg[i]) {
            labels[i] = markers[i];
            queue.push({-energy[i], order++, i});
        }
    }
    while (!queue.empty()) {
        const std::size_t p = queue.top().pixel;
        queue.pop();
        const std::size_t r = p / w, c = p % w;
        const std::size_t nbr[4] = {r > 0 ? p - w : p, r + 1 < h ? p + w : p,
                                    c > 0 ? p - 1 : p, c + 1 < w ? p + 1 : p};
        for (std::size_t q : nbr) {
            if (q == p || !fg[q] || labels[q] != 0) continue;
            labels[q] = labels[p];
            queue.push({-energy[q], order++, q});
        }
    }

    const std::size_t count = filter_and_compact(labels, marker_count, params.min_instance_px);

    InstanceMap out;
    out.height = h;
    out.width = w;
    out.labels = std::move(labels);
    out.count = count;
    out.classes.assign(count + 1, params.unknown_class);
    return out;
}

InstanceMap majority_vote_types(const InstanceMap& inst, const TensorF32& nt_map,
                                std::size_t unknown_class) {
    if (nt_map.rank() != 3 || nt_map.extent(0) != inst.height || nt_map.extent(1) != inst.width)
        throw ShapeMismatch("majority_vote_types: nt map " + nt_map.shape_str() +
                            " does not match instance map");
    const std::size_t classes = nt_map.extent(2);
    std::vector<std::size_t> votes(inst.count * classes, 0);

    const std::size_t n = inst.height * inst.width;
    for (std::size_t i = 0; i < n; ++i) {
        const std::int32_t id = inst.labels[i];
        if (id <= 0) continue;
        const float* probs = nt_map.data() + i * classes;
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (probs[c] > probs[best]) best = c;
        ++votes[(static_cast<std::size_t>(id) - 1) * classes + best];
    }

    InstanceMap out = inst;
    out.classes.assign(inst.count + 1, 0);
    for (std::size_t id = 1; id <= inst.count; ++id) {
        const std::size_t* v = votes.data() + (id - 1) * classes;
        // Modal class, lower id on ties; class 0 (background) is skipped in
        // favour of the best nucleus class when it would win.
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (v[c] > v[best]) best = c;
        if (best == 0) {
            std::size_t alt = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (alt == 0 ? v[c] > 0 : v[c] > v[alt]) alt = c;
            best = alt;
        }
        out.classes[id] = best == 0 ? unknown_class : best;
    }
    return out;
}

} // namespace cellvit
