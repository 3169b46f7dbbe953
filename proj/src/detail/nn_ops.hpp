#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cellvit/tensor.hpp"

namespace cellvit::detail {

// splitmix64; fixed algorithm so seeded weight init reproduces everywhere.
struct SplitMix64 {
    std::uint64_t state;
    explicit SplitMix64(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    // uniform in [0,1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    // uniform in [-bound, +bound]
    float uniform_symmetric(double bound) {
        return static_cast<float>((uniform() * 2.0 - 1.0) * bound);
    }
};

// out(M,N) = a(M,K) * b(K,N); accumulates in f32 with k-inner panels.
inline void matmul(const float* a, const float* b, float* out,
                   std::size_t m, std::size_t k, std::size_t n) {
    std::fill(out, out + m * n, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* orow = out + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const float av = arow[kk];
            if (av == 0.0f) continue;
            const float* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

inline void add_bias_rows(float* out, const float* bias, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        float* row = out + i * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] += bias[j];
    }
}

inline void layer_norm_rows(const float* in, float* out, const float* gain, const float* bias,
                            std::size_t rows, std::size_t cols, float eps = 1e-6f) {
    for (std::size_t i = 0; i < rows; ++i) {
        const float* x = in + i * cols;
        float* y = out + i * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += x[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = x[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const float inv = 1.0f / std::sqrt(static_cast<float>(var) + eps);
        for (std::size_t j = 0; j < cols; ++j)
            y[j] = (x[j] - static_cast<float>(mean)) * inv * gain[j] + bias[j];
    }
}

inline void softmax_row(float* x, std::size_t n) {
    float mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    float sum = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const float inv = 1.0f / sum;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

inline void relu_inplace(float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

// 3x3 same-size convolution on channels-last (H, W, Cin) with zero padding.
// Kernel layout (3, 3, Cin, Cout).
inline TensorF32 conv3x3(const TensorF32& in, const TensorF32& kernel, const TensorF32& bias) {
    const std::size_t h = in.extent(0), w = in.extent(1), cin = in.extent(2);
    const std::size_t cout = kernel.extent(3);
    TensorF32 out({h, w, cout});
    const float* kp = kernel.data();
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            float* o = out.data() + (r * w + c) * cout;
            for (std::size_t oc = 0; oc < cout; ++oc) o[oc] = bias[oc];
            for (int dr = -1; dr <= 1; ++dr) {
                const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
                if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                for (int dc = -1; dc <= 1; ++dc) {
                    const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c) + dc;
                    if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                    const float* px = in.data() + (rr * w + cc) * cin;
                    const float* kk = kp + (((dr + 1) * 3 + (dc + 1)) * cin) * cout;
                    for (std::size_t ic = 0; ic < cin; ++ic) {
                        const float v = px[ic];
                        if (v == 0.0f) continue;
                        const float* krow = kk + ic * cout;
                        for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += v * krow[oc];
                    }
                }
            }
        }
    }
    return out;
}

// 2x2 stride-2 transposed convolution: (H, W, Cin) -> (2H, 2W, Cout).
// Kernel layout (2, 2, Cin, Cout).
inline TensorF32 deconv2x2(const TensorF32& in, const TensorF32& kernel, const TensorF32& bias) {
    const std::size_t h = in.extent(0), w = in.extent(1), cin = in.extent(2);
    const std::size_t cout = kernel.extent(3);
    TensorF32 out({2 * h, 2 * w, cout});
    float* op = out.data();
    for (std::size_t i = 0; i < out.element_count(); i += cout)
        for (std::size_t oc = 0; oc < cout; ++oc) op[i + oc] = bias[oc];
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const float* px = in.data() + (r * w + c) * cin;
            for (std::size_t dr = 0; dr < 2; ++dr) {
                for (std::size_t dc = 0; dc < 2; ++dc) {
                    float* o = op + ((2 * r + dr) * 2 * w + (2 * c + dc)) * cout;
                    const float* kk = kernel.data() + ((dr * 2 + dc) * cin) * cout;
                    for (std::size_t ic = 0; ic < cin; ++ic) {
                        const float v = px[ic];
                        if (v == 0.0f) continue;
                        const float* krow = kk + ic * cout;
                        for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += v * krow[oc];
                    }
                }
            }
        }
    }
    return out;
}

inline TensorF32 concat_channels(const TensorF32& a, const TensorF32& b) {
    const std::size_t h = a.extent(0), w = a.extent(1), ca = a.extent(2), cb = b.extent(2);
    TensorF32 out({h, w, ca + cb});
    for (std::size_t i = 0; i < h * w; ++i) {
        float* o = out.data() + i * (ca + cb);
        const float* pa = a.data() + i * ca;
        const float* pb = b.data() + i * cb;
        std::copy(pa, pa + ca, o);
        std::copy(pb, pb + cb, o + ca);
    }
    return out;
}

} // namespace cellvit::detail
