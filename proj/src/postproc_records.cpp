#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "cellvit/errors.hpp"
#include "cellvit/postproc.hpp"

namespace cellvit {

namespace {

// Moore neighborhood in clockwise screen order (row grows downward).
constexpr std::array<std::pair<int, int>, 8> kDirs = {{
    {0, -1},  // W
    {-1, -1}, // NW
    {-1, 0},  // N
    {-1, 1},  // NE
    {0, 1},   // E
    {1, 1},   // SE
    {1, 0},   // S
    {1, -1},  // SW
}};

int dir_index(int dr, int dc) {
    for (int i = 0; i < 8; ++i)
        if (kDirs[i].first == dr && kDirs[i].second == dc) return i;
    return 0;
}

// Clockwise Moore boundary trace with Jacob's stopping criterion. `start`
// must be the topmost-then-leftmost pixel of the instance, which guarantees
// its west neighbor is outside.
std::vector<std::pair<std::int64_t, std::int64_t>>
trace_boundary(const InstanceMap& inst, std::int32_t id, std::int64_t start_r,
               std::int64_t start_c, std::size_t area) {
    const auto inside = [&](std::int64_t r, std::int64_t c) {
        return r >= 0 && c >= 0 && r < static_cast<std::int64_t>(inst.height) &&
               c < static_cast<std::int64_t>(inst.width) &&
               inst.labels[static_cast<std::size_t>(r) * inst.width +
                           static_cast<std::size_t>(c)] == id;
    };

    std::vector<std::pair<std::int64_t, std::int64_t>> contour{{start_r, start_c}};
    if (area == 1) return contour;

    std::int64_t cur_r = start_r, cur_c = start_c;
    int prev_bg = 0; // west of the start pixel is outside
    int initial_dir = -1;
    const std::size_t cap = 8 * (area + 2) * 4;
    for (std::size_t step = 0; step < cap; ++step) {
        int found = -1;
        for (int i = 1; i <= 8; ++i) {
            const int d = (prev_bg + i) % 8;
            if (inside(cur_r + kDirs[d].first, cur_c + kDirs[d].second)) {
                found = d;
                break;
            }
        }
        if (found < 0) break; // isolated pixel
        if (initial_dir >= 0 && cur_r == start_r && cur_c == start_c && found == initial_dir)
            break;
        if (initial_dir < 0) initial_dir = found;

        const int bg = (found + 7) % 8; // last outside cell scanned
        const std::int64_t bg_r = cur_r + kDirs[bg].first;
        const std::int64_t bg_c = cur_c + kDirs[bg].second;
        cur_r += kDirs[found].first;
        cur_c += kDirs[found].second;
        contour.emplace_back(cur_r, cur_c);
        prev_bg = dir_index(static_cast<int>(bg_r - cur_r), static_cast<int>(bg_c - cur_c));
    }

    // Keep the polygon open in memory; export appends the closing vertex.
    if (contour.size() > 1 && contour.back() == contour.front()) contour.pop_back();
    return contour;
}

} // namespace

std::vector<NucleusRecord> extract_records(const InstanceMap& inst) {
    struct Stats {
        std::int64_t r0 = -1, c0 = -1, r1 = -1, c1 = -1;
        double sum_r = 0.0, sum_c = 0.0;
        std::int64_t area = 0;
        std::int64_t first_r = -1, first_c = -1;
    };
    std::vector<Stats> stats(inst.count + 1);

    for (std::size_t r = 0; r < inst.height; ++r) {
        for (std::size_t c = 0; c < inst.width; ++c) {
            const std::int32_t id = inst.labels[r * inst.width + c];
            if (id <= 0) continue;
            Stats& s = stats[static_cast<std::size_t>(id)];
            const auto ri = static_cast<std::int64_t>(r), ci = static_cast<std::int64_t>(c);
            if (s.area == 0) {
                s.r0 = s.r1 = ri;
                s.c0 = s.c1 = ci;
                s.first_r = ri;
                s.first_c = ci;
            } else {
                s.r0 = std::min(s.r0, ri);
                s.c0 = std::min(s.c0, ci);
                s.r1 = std::max(s.r1, ri);
                s.c1 = std::max(s.c1, ci);
            }
            s.sum_r += static_cast<double>(ri);
            s.sum_c += static_cast<double>(ci);
            ++s.area;
        }
    }

    std::vector<NucleusRecord> records;
    records.reserve(inst.count);
    for (std::size_t id = 1; id <= inst.count; ++id) {
        const Stats& s = stats[id];
        if (s.area == 0) continue;
        NucleusRecord rec;
        rec.id = id;
        rec.class_id = id < inst.classes.size() ? inst.classes[id] : 0;
        rec.bbox_r0 = s.r0;
        rec.bbox_c0 = s.c0;
        rec.bbox_r1 = s.r1;
        rec.bbox_c1 = s.c1;
        rec.centroid_r = s.sum_r / static_cast<double>(s.area);
        rec.centroid_c = s.sum_c / static_cast<double>(s.area);
        rec.area_px = s.area;
        rec.contour = trace_boundary(inst, static_cast<std::int32_t>(id), s.first_r, s.first_c,
                                     static_cast<std::size_t>(s.area));
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace cellvit
