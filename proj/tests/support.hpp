#pragma once

// Shared test support: independent scalar oracles and synthetic fixtures.
// Everything here is deliberately written as plain double-precision loops,
// separate from the library implementations it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "cellvit/postproc.hpp"
#include "cellvit/tensor.hpp"

namespace oracle {

struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

// ---- scalar loss oracles --------------------------------------------------

inline double bce(const std::vector<double>& pred, const std::vector<double>& gt,
                  std::size_t rows, std::size_t classes) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < classes; ++c)
            acc += gt[i * classes + c] * std::log(pred[i * classes + c]);
    return -acc / static_cast<double>(rows);
}

inline double dice(const std::vector<double>& pred, const std::vector<double>& gt,
                   std::size_t rows, std::size_t classes, double eps) {
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        double inter = 0.0, sy = 0.0, sp = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            inter += gt[i * classes + c] * pred[i * classes + c];
            sy += gt[i * classes + c];
            sp += pred[i * classes + c];
        }
        total += 1.0 - (2.0 * inter + eps) / (sy + sp + eps);
    }
    return total;
}

inline double focal_tversky(const std::vector<double>& pred, const std::vector<double>& gt,
                            std::size_t rows, std::size_t classes, double alpha, double beta,
                            double gamma, double eps) {
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        double tp = 0.0, fn = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double y = gt[i * classes + c], p = pred[i * classes + c];
            tp += y * p;
            fn += y * (1.0 - p);
            fp += (1.0 - y) * p;
        }
        const double ti = (tp + eps) / (tp + alpha * fn + beta * fp + eps);
        total += std::pow(1.0 - ti, 1.0 / gamma);
    }
    return total;
}

inline double mse(const std::vector<double>& pred, const std::vector<double>& gt) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

// Sobel responses with zero padding, matching the documented MSGE contract.
inline std::vector<double> sobel(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 bool horizontal) {
    static const int gx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int gy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    std::vector<double> out(h * w, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
                    const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c) + dc;
                    if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) ||
                        cc >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    const int k = horizontal ? gx[dr + 1][dc + 1] : gy[dr + 1][dc + 1];
                    acc += k * img[static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)];
                }
            }
            out[r * w + c] = acc;
        }
    }
    return out;
}

inline double msge(const std::vector<double>& pred_h, const std::vector<double>& pred_v,
                   const std::vector<double>& gt_h, const std::vector<double>& gt_v,
                   const std::vector<double>& mask, std::size_t h, std::size_t w) {
    const auto ph = sobel(pred_h, h, w, true);
    const auto gh = sobel(gt_h, h, w, true);
    const auto pv = sobel(pred_v, h, w, false);
    const auto gv = sobel(gt_v, h, w, false);
    double acc = 0.0, count = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (mask[i] == 0.0) continue;
        count += 1.0;
        acc += (ph[i] - gh[i]) * (ph[i] - gh[i]) + (pv[i] - gv[i]) * (pv[i] - gv[i]);
    }
    return count > 0.0 ? acc / count : 0.0;
}

inline double softmax_ce(const std::vector<double>& logits, std::size_t target) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return std::log(sum) + mx - logits[target];
}

// ---- metric oracles -------------------------------------------------------

// Brute-force all-pairs IoU table of two label images.
struct PairIou {
    std::int32_t gt, pred;
    double iou;
};

inline std::vector<PairIou> all_pairs_iou(const cellvit::InstanceMap& gt,
                                          const cellvit::InstanceMap& pred) {
    std::vector<PairIou> out;
    for (std::int32_t g = 1; g <= static_cast<std::int32_t>(gt.count); ++g) {
        for (std::int32_t p = 1; p <= static_cast<std::int32_t>(pred.count); ++p) {
            std::size_t inter = 0, a = 0, b = 0;
            for (std::size_t i = 0; i < gt.labels.size(); ++i) {
                const bool ig = gt.labels[i] == g;
                const bool ip = pred.labels[i] == p;
                inter += ig && ip;
                a += ig;
                b += ip;
            }
            const std::size_t uni = a + b - inter;
            if (a > 0 && b > 0)
                out.push_back({g, p, uni ? static_cast<double>(inter) / uni : 0.0});
        }
    }
    return out;
}

struct PqOracle {
    double pq = 0.0, dq = 0.0, sq = 0.0;
};

inline PqOracle pq_brute_force(const cellvit::InstanceMap& gt, const cellvit::InstanceMap& pred) {
    std::set<std::int32_t> gt_ids, pred_ids;
    for (std::int32_t v : gt.labels)
        if (v > 0) gt_ids.insert(v);
    for (std::int32_t v : pred.labels)
        if (v > 0) pred_ids.insert(v);

    const auto pairs = all_pairs_iou(gt, pred);
    double tp = 0.0, iou_sum = 0.0;
    std::set<std::int32_t> matched_gt, matched_pred;
    for (const auto& p : pairs) {
        if (p.iou > 0.5) {
            tp += 1.0;
            iou_sum += p.iou;
            matched_gt.insert(p.gt);
            matched_pred.insert(p.pred);
        }
    }
    const double fp = static_cast<double>(pred_ids.size() - matched_pred.size());
    const double fn = static_cast<double>(gt_ids.size() - matched_gt.size());
    PqOracle out;
    if (tp == 0.0 && fp == 0.0 && fn == 0.0) {
        out.pq = out.dq = out.sq = 1.0;
        return out;
    }
    if (tp == 0.0) return out;
    out.dq = tp / (tp + 0.5 * fp + 0.5 * fn);
    out.sq = iou_sum / tp;
    out.pq = out.dq * out.sq;
    return out;
}

// Random label image with up to max_instances non-overlapping rectangles.
inline cellvit::InstanceMap random_instance_map(Rng& rng, std::size_t side,
                                                std::size_t max_instances,
                                                std::size_t num_classes = 6) {
    cellvit::InstanceMap map;
    map.height = map.width = side;
    map.labels.assign(side * side, 0);
    const std::size_t n = 1 + rng.next() % max_instances;
    std::int32_t id = 0;
    map.classes.assign(1, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t h = 3 + rng.next() % (side / 3);
        const std::size_t w = 3 + rng.next() % (side / 3);
        const std::size_t r0 = rng.next() % (side - h);
        const std::size_t c0 = rng.next() % (side - w);
        bool clash = false;
        for (std::size_t r = r0; r < r0 + h && !clash; ++r)
            for (std::size_t c = c0; c < c0 + w && !clash; ++c)
                clash = map.labels[r * side + c] != 0;
        if (clash) continue;
        ++id;
        for (std::size_t r = r0; r < r0 + h; ++r)
            for (std::size_t c = c0; c < c0 + w; ++c)
                map.labels[r * side + c] = id;
        map.classes.push_back(1 + rng.next() % (num_classes - 1));
    }
    map.count = static_cast<std::size_t>(id);
    return map;
}

// ---- HoVer-Net separation fixtures -----------------------------------------

struct Disc {
    double row, col, radius;
    std::size_t cls = 1;
};

struct HvFixture {
    cellvit::PredictionBundle bundle;
    cellvit::InstanceMap truth;
};

// Ground-truth masks (nearest-center assignment where discs overlap) plus
// the ideal NP/HV maps the network is trained to produce for them.
inline HvFixture make_hv_fixture(std::size_t h, std::size_t w, const std::vector<Disc>& discs,
                                 std::size_t classes = 6) {
    HvFixture f;
    f.truth.height = h;
    f.truth.width = w;
    f.truth.labels.assign(h * w, 0);
    f.truth.classes.assign(1, 0);
    for (const Disc& d : discs) f.truth.classes.push_back(d.cls);
    f.truth.count = discs.size();

    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            double best = 1.0;
            std::int32_t id = 0;
            for (std::size_t k = 0; k < discs.size(); ++k) {
                const double dr = static_cast<double>(r) - discs[k].row;
                const double dc = static_cast<double>(c) - discs[k].col;
                const double rel = std::sqrt(dr * dr + dc * dc) / discs[k].radius;
                if (rel <= 1.0 && rel < best) {
                    best = rel;
                    id = static_cast<std::int32_t>(k + 1);
                }
            }
            f.truth.labels[r * w + c] = id;
        }
    }

    f.bundle.np_map = cellvit::TensorF32({h, w, 2});
    f.bundle.hv_map = cellvit::TensorF32({h, w, 2});
    f.bundle.nt_map = cellvit::TensorF32({h, w, classes});

    std::vector<double> max_dc(discs.size() + 1, 1.0), max_dr(discs.size() + 1, 1.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::int32_t id = f.truth.labels[r * w + c];
            if (id <= 0) continue;
            const Disc& d = discs[static_cast<std::size_t>(id - 1)];
            max_dc[id] = std::max(max_dc[id], std::abs(static_cast<double>(c) - d.col));
            max_dr[id] = std::max(max_dr[id], std::abs(static_cast<double>(r) - d.row));
        }
    }
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t i = r * w + c;
            const std::int32_t id = f.truth.labels[i];
            if (id <= 0) {
                f.bundle.np_map[i * 2] = 1.0f;
                f.bundle.nt_map[i * classes] = 1.0f;
                continue;
            }
            const Disc& d = discs[static_cast<std::size_t>(id - 1)];
            f.bundle.np_map[i * 2 + 1] = 1.0f;
            f.bundle.hv_map[i * 2] =
                static_cast<float>((static_cast<double>(c) - d.col) / max_dc[id]);
            f.bundle.hv_map[i * 2 + 1] =
                static_cast<float>((static_cast<double>(r) - d.row) / max_dr[id]);
            f.bundle.nt_map[i * classes + std::min(d.cls, classes - 1)] = 1.0f;
        }
    }
    return f;
}

inline double instance_iou(const cellvit::InstanceMap& a, std::int32_t ida,
                           const cellvit::InstanceMap& b, std::int32_t idb) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const bool pa = a.labels[i] == ida;
        const bool pb = b.labels[i] == idb;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Jitters a label map: shifts every instance by up to `max_shift` pixels and
// drops instances with probability drop_p, yielding a companion prediction.
inline cellvit::InstanceMap jitter_instance_map(const cellvit::InstanceMap& gt, Rng& rng,
                                                int max_shift, double drop_p) {
    cellvit::InstanceMap out;
    out.height = gt.height;
    out.width = gt.width;
    out.labels.assign(gt.labels.size(), 0);
    out.classes.assign(1, 0);
    std::int32_t next = 0;
    for (std::size_t id = 1; id <= gt.count; ++id) {
        if (rng.uniform() < drop_p) continue;
        const int dr = static_cast<int>(rng.next() % (2 * max_shift + 1)) - max_shift;
        const int dc = static_cast<int>(rng.next() % (2 * max_shift + 1)) - max_shift;
        ++next;
        for (std::size_t r = 0; r < gt.height; ++r) {
            for (std::size_t c = 0; c < gt.width; ++c) {
                if (gt.labels[r * gt.width + c] != static_cast<std::int32_t>(id)) continue;
                const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
                const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c) + dc;
                if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(gt.height) ||
                    cc >= static_cast<std::ptrdiff_t>(gt.width))
                    continue;
                if (out.labels[static_cast<std::size_t>(rr) * gt.width +
                               static_cast<std::size_t>(cc)] == 0)
                    out.labels[static_cast<std::size_t>(rr) * gt.width +
                               static_cast<std::size_t>(cc)] = next;
            }
        }
        out.classes.push_back(gt.classes[id]);
    }
    out.count = static_cast<std::size_t>(next);
    return out;
}

} // namespace oracle
