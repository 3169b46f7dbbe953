#include <cmath>
#include <cstring>
#include <vector>

#include "cellvit/errors.hpp"
#include "cellvit/model.hpp"
#include "detail/nn_ops.hpp"

namespace cellvit {

TensorF32 patchify(const TensorF32& image, const ModelConfig& cfg) {
    if (image.rank() != 3)
        throw ShapeMismatch("patchify expects (H, W, C), got " + image.shape_str());
    const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
    const std::size_t p = cfg.patch_size;
    if (h % p != 0 || w % p != 0)
        throw NonDivisibleInput("image " + image.shape_str() + " not divisible by patch size " +
                                std::to_string(p));
    if (c != cfg.in_channels)
        throw ShapeMismatch("image has " + std::to_string(c) + " channels, config expects " +
                            std::to_string(cfg.in_channels));

    const std::size_t gr = h / p, gc = w / p;
    const std::size_t token_len = p * p * c;
    TensorF32 out({gr * gc, token_len});
    for (std::size_t tr = 0; tr < gr; ++tr) {
        for (std::size_t tc = 0; tc < gc; ++tc) {
            float* tok = out.data() + (tr * gc + tc) * token_len;
            for (std::size_t pr = 0; pr < p; ++pr) {
                const float* src = image.data() + ((tr * p + pr) * w + tc * p) * c;
                std::memcpy(tok + pr * p * c, src, p * c * sizeof(float));
            }
        }
    }
    return out;
}

TensorF32 interpolate_pos_table(const TensorF32& table, std::size_t trained_grid,
                                std::size_t rows, std::size_t cols) {
    const std::size_t d = table.extent(1);
    if (table.extent(0) != trained_grid * trained_grid + 1)
        throw ShapeMismatch("positional table rows " + std::to_string(table.extent(0)) +
                            " do not match trained grid " + std::to_string(trained_grid));
    if (rows == trained_grid && cols == trained_grid) return table;

    TensorF32 out({rows * cols + 1, d});
    std::memcpy(out.data(), table.data(), d * sizeof(float)); // class-token row untouched

    const auto src_coord = [&](std::size_t dst, std::size_t dst_n) {
        if (dst_n <= 1) return 0.0;
        return static_cast<double>(dst) * static_cast<double>(trained_grid - 1) /
               static_cast<double>(dst_n - 1);
    };

    for (std::size_t r = 0; r < rows; ++r) {
        const double sr = src_coord(r, rows);
        const std::size_t r0 = static_cast<std::size_t>(sr);
        const std::size_t r1 = std::min(r0 + 1, trained_grid - 1);
        const float fr = static_cast<float>(sr - static_cast<double>(r0));
        for (std::size_t c = 0; c < cols; ++c) {
            const double sc = src_coord(c, cols);
            const std::size_t c0 = static_cast<std::size_t>(sc);
            const std::size_t c1 = std::min(c0 + 1, trained_grid - 1);
            const float fc = static_cast<float>(sc - static_cast<double>(c0));

            const float* p00 = table.data() + (1 + r0 * trained_grid + c0) * d;
            const float* p01 = table.data() + (1 + r0 * trained_grid + c1) * d;
            const float* p10 = table.data() + (1 + r1 * trained_grid + c0) * d;
            const float* p11 = table.data() + (1 + r1 * trained_grid + c1) * d;
            float* o = out.data() + (1 + r * cols + c) * d;
            for (std::size_t k = 0; k < d; ++k) {
                const float top = p00[k] + (p01[k] - p00[k]) * fc;
                const float bot = p10[k] + (p11[k] - p10[k]) * fc;
                o[k] = top + (bot - top) * fr;
            }
        }
    }
    return out;
}

TokenSequence embed(const TensorF32& flat_tokens, const Weights& weights,
                    const ModelConfig& cfg, std::size_t grid_rows, std::size_t grid_cols) {
    const std::size_t n = flat_tokens.extent(0);
    const std::size_t token_len = flat_tokens.extent(1);
    const std::size_t d = cfg.embed_dim;
    if (n != grid_rows * grid_cols)
        throw ShapeMismatch("token count " + std::to_string(n) + " does not match grid " +
                            std::to_string(grid_rows) + "x" + std::to_string(grid_cols));

    const TensorF32& proj = weights.at("embed.proj");
    if (proj.extent(0) != token_len || proj.extent(1) != d)
        throw ShapeMismatch("embed.proj shape " + proj.shape_str() + " incompatible with tokens " +
                            flat_tokens.shape_str());
    const TensorF32& cls = weights.at("embed.cls");
    const TensorF32 pos =
        interpolate_pos_table(weights.at("embed.pos"), cfg.trained_pos_grid, grid_rows, grid_cols);

    TokenSequence seq;
    seq.grid_rows = grid_rows;
    seq.grid_cols = grid_cols;
    seq.tokens = TensorF32({n + 1, d});

    std::memcpy(seq.tokens.data(), cls.data(), d * sizeof(float));
    detail::matmul(flat_tokens.data(), proj.data(), seq.tokens.data() + d, n, token_len, d);
    for (std::size_t i = 0; i <= n; ++i) {
        float* row = seq.tokens.data() + i * d;
        const float* prow = pos.data() + i * d;
        for (std::size_t k = 0; k < d; ++k) row[k] += prow[k];
    }
    return seq;
}

namespace {

void gelu_inplace(float* x, std::size_t n) {
    constexpr float inv_sqrt2 = 0.7071067811865475f;
    for (std::size_t i = 0; i < n; ++i)
        x[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * inv_sqrt2));
}

// One pre-norm block: z' = z + MHA(LN(z)); z = z' + MLP(LN(z')).
void transformer_block(TensorF32& z, const Weights& w, const std::string& prefix,
                       std::size_t heads) {
    const std::size_t m = z.extent(0);
    const std::size_t d = z.extent(1);
    const std::size_t dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    TensorF32 norm({m, d});
    detail::layer_norm_rows(z.data(), norm.data(), w.at(prefix + "ln1.g").data(),
                            w.at(prefix + "ln1.b").data(), m, d);

    TensorF32 qkv({m, 3 * d});
    detail::matmul(norm.data(), w.at(prefix + "qkv.w").data(), qkv.data(), m, d, 3 * d);
    detail::add_bias_rows(qkv.data(), w.at(prefix + "qkv.b").data(), m, 3 * d);

    TensorF32 attn({m, d});
    std::vector<float> scores(m);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
        for (std::size_t r = 0; r < m; ++r) {
            const float* q = qkv.data() + r * 3 * d + qo;
            for (std::size_t j = 0; j < m; ++j) {
                const float* k = qkv.data() + j * 3 * d + ko;
                float dot = 0.0f;
                for (std::size_t t = 0; t < dh; ++t) dot += q[t] * k[t];
                scores[j] = dot * scale;
            }
            detail::softmax_row(scores.data(), m);
            float* o = attn.data() + r * d + qo;
            std::fill(o, o + dh, 0.0f);
            for (std::size_t j = 0; j < m; ++j) {
                const float s = scores[j];
                const float* v = qkv.data() + j * 3 * d + vo;
                for (std::size_t t = 0; t < dh; ++t) o[t] += s * v[t];
            }
        }
    }

    TensorF32 proj({m, d});
    detail::matmul(attn.data(), w.at(prefix + "out.w").data(), proj.data(), m, d, d);
    detail::add_bias_rows(proj.data(), w.at(prefix + "out.b").data(), m, d);
    for (std::size_t i = 0; i < m * d; ++i) z[i] += proj[i];

    detail::layer_norm_rows(z.data(), norm.data(), w.at(prefix + "ln2.g").data(),
                            w.at(prefix + "ln2.b").data(), m, d);
    const std::size_t dm = w.at(prefix + "fc1.w").extent(1);
    TensorF32 hidden({m, dm});
    detail::matmul(norm.data(), w.at(prefix + "fc1.w").data(), hidden.data(), m, d, dm);
    detail::add_bias_rows(hidden.data(), w.at(prefix + "fc1.b").data(), m, dm);
    gelu_inplace(hidden.data(), m * dm);
    detail::matmul(hidden.data(), w.at(prefix + "fc2.w").data(), proj.data(), m, dm, d);
    detail::add_bias_rows(proj.data(), w.at(prefix + "fc2.b").data(), m, d);
    for (std::size_t i = 0; i < m * d; ++i) z[i] += proj[i];
}

TensorF32 strip_class_token(const TokenSequence& seq, std::size_t d) {
    TensorF32 grid({seq.grid_rows, seq.grid_cols, d});
    std::memcpy(grid.data(), seq.tokens.data() + d, seq.image_tokens() * d * sizeof(float));
    return grid;
}

} // namespace

std::pair<TokenSequence, SkipFeatures> encode(const TokenSequence& seq, const Weights& weights,
                                              const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim;
    if (seq.tokens.rank() != 2 || seq.tokens.extent(1) != d ||
        seq.tokens.extent(0) != seq.image_tokens() + 1)
        throw ShapeMismatch("token sequence shape " + seq.tokens.shape_str() +
                            " inconsistent with grid");

    TokenSequence state = seq;
    SkipFeatures skips;
    const std::size_t quarter = cfg.depth / 4;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        transformer_block(state.tokens, weights, "enc." + std::to_string(i) + ".", cfg.heads);
        if ((i + 1) % quarter == 0)
            skips.levels[(i + 1) / quarter - 1] = strip_class_token(state, d);
    }
    return {std::move(state), std::move(skips)};
}

} // namespace cellvit
