#include <algorithm>
#include <cstring>
#include <string>

#include "cellvit/errors.hpp"
#include "cellvit/model.hpp"
#include "detail/nn_ops.hpp"

namespace cellvit {

namespace {

using detail::conv3x3;
using detail::deconv2x2;
using detail::relu_inplace;

TensorF32 conv_relu(const TensorF32& in, const Weights& w, const std::string& base) {
    TensorF32 out = conv3x3(in, w.at(base + ".w"), w.at(base + ".b"));
    relu_inplace(out.data(), out.element_count());
    return out;
}

TensorF32 deconv_relu(const TensorF32& in, const Weights& w, const std::string& base) {
    TensorF32 out = deconv2x2(in, w.at(base + ".w"), w.at(base + ".b"));
    relu_inplace(out.data(), out.element_count());
    return out;
}

// Lifts skip level `level` (token grid resolution) to the scale of the
// stage that fuses it: deconv, then alternating conv/deconv.
TensorF32 project_skip(const TensorF32& skip, const Weights& w, std::size_t level,
                       std::size_t ups) {
    const std::string p = "skipproj." + std::to_string(level) + ".";
    TensorF32 x = deconv_relu(skip, w, p + "d0");
    for (std::size_t j = 1; j < ups; ++j) {
        x = conv_relu(x, w, p + "c" + std::to_string(j - 1));
        x = deconv_relu(x, w, p + "d" + std::to_string(j));
    }
    return x;
}

// Per-pixel linear head on a (H, W, Cin) map.
TensorF32 pixel_head(const TensorF32& in, const TensorF32& wmat, const TensorF32& bias) {
    const std::size_t px = in.extent(0) * in.extent(1);
    const std::size_t cin = in.extent(2), cout = wmat.extent(1);
    TensorF32 out({in.extent(0), in.extent(1), cout});
    detail::matmul(in.data(), wmat.data(), out.data(), px, cin, cout);
    detail::add_bias_rows(out.data(), bias.data(), px, cout);
    return out;
}

void softmax_pixels(TensorF32& map) {
    const std::size_t px = map.extent(0) * map.extent(1);
    const std::size_t c = map.extent(2);
    for (std::size_t i = 0; i < px; ++i) detail::softmax_row(map.data() + i * c, c);
}

void clamp_unit(TensorF32& map) {
    for (std::size_t i = 0; i < map.element_count(); ++i)
        map[i] = std::clamp(map[i], -1.0f, 1.0f);
}

TensorF32 run_branch(const char* br, const SkipFeatures& skips, const TensorF32& stem,
                     const Weights& w, const ModelConfig& cfg, std::size_t out_ch) {
    const std::string base = std::string("dec.") + br + ".";
    const std::size_t stages = cfg.decoder_stages();

    TensorF32 x = skips.levels[3]; // bottleneck Z_L
    for (std::size_t s = 0; s < stages; ++s) {
        x = deconv_relu(x, w, base + "up" + std::to_string(s));
        if (s + 1 == stages) {
            x = detail::concat_channels(x, stem);
        } else if (s < 3) {
            x = detail::concat_channels(x, project_skip(skips.levels[2 - s], w, 2 - s, s + 1));
        }
        x = conv_relu(x, w, base + "blk" + std::to_string(s) + ".c1");
        x = conv_relu(x, w, base + "blk" + std::to_string(s) + ".c2");
    }
    (void)out_ch;
    return pixel_head(x, w.at(base + "head.w"), w.at(base + "head.b"));
}

} // namespace

PredictionBundle decode(const SkipFeatures& skips, const TensorF32& image,
                        const TokenSequence& final_seq, const Weights& weights,
                        const ModelConfig& cfg) {
    cfg.validate();
    const TensorF32& stem_in = skips.stem.empty() ? image : skips.stem;
    if (stem_in.rank() != 3)
        throw ShapeMismatch("stem input must be (H, W, C), got " + stem_in.shape_str());
    const std::size_t h = stem_in.extent(0), w = stem_in.extent(1);
    for (const TensorF32& lvl : skips.levels) {
        if (lvl.rank() != 3 || lvl.extent(0) * cfg.patch_size != h ||
            lvl.extent(1) * cfg.patch_size != w || lvl.extent(2) != cfg.embed_dim)
            throw ShapeMismatch("skip level shape " + lvl.shape_str() +
                                " inconsistent with stem " + stem_in.shape_str());
    }

    TensorF32 stem = conv_relu(stem_in, weights, "stem.c1");
    stem = conv_relu(stem, weights, "stem.c2");

    PredictionBundle out;
    out.np_map = run_branch("np", skips, stem, weights, cfg, 2);
    softmax_pixels(out.np_map);
    out.hv_map = run_branch("hv", skips, stem, weights, cfg, 2);
    clamp_unit(out.hv_map);
    out.nt_map = run_branch("nt", skips, stem, weights, cfg, cfg.num_nuclei_classes);
    softmax_pixels(out.nt_map);

    const std::size_t d = cfg.embed_dim;
    out.tissue_logits = TensorF32({cfg.num_tissue_classes});
    detail::matmul(final_seq.tokens.data(), weights.at("tissue.w").data(),
                   out.tissue_logits.data(), 1, d, cfg.num_tissue_classes);
    for (std::size_t c = 0; c < cfg.num_tissue_classes; ++c)
        out.tissue_logits[c] += weights.at("tissue.b")[c];

    out.tokens_final = TensorF32({final_seq.image_tokens(), d});
    std::memcpy(out.tokens_final.data(), final_seq.tokens.data() + d,
                final_seq.image_tokens() * d * sizeof(float));
    return out;
}

PredictionBundle forward(const TensorF32& image, const Weights& weights, const ModelConfig& cfg) {
    cfg.validate();
    const TensorF32 flat = patchify(image, cfg);
    const std::size_t gr = image.extent(0) / cfg.patch_size;
    const std::size_t gc = image.extent(1) / cfg.patch_size;
    const TokenSequence seq = embed(flat, weights, cfg, gr, gc);
    auto [final_seq, skips] = encode(seq, weights, cfg);
    skips.stem = image;
    return decode(skips, image, final_seq, weights, cfg);
}

} // namespace cellvit
