#pragma once

#include <cstddef>
#include <vector>

#include "cellvit/tensor.hpp"

namespace cellvit::detail {

constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

// Correlation of channel `ch` of an (H, W, C) map with a 3x3 kernel,
// zero padding; doubles for stable accumulation.
inline std::vector<double> sobel_channel(const TensorF32& map, std::size_t ch,
                                         const int k[3][3]) {
    const std::size_t h = map.extent(0), w = map.extent(1), c = map.extent(2);
    std::vector<double> out(h * w, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            double acc = 0.0;
            for (int dr = -1; dr <= 1; ++dr) {
                const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
                if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                for (int dc = -1; dc <= 1; ++dc) {
                    const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(col) + dc;
                    if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                    acc += static_cast<double>(k[dr + 1][dc + 1]) *
                           map.data()[(rr * static_cast<std::ptrdiff_t>(w) + cc) * c + ch];
                }
            }
            out[r * w + col] = acc;
        }
    }
    return out;
}

} // namespace cellvit::detail
