#include "cellvit/model.hpp"

#include <cmath>

#include "cellvit/errors.hpp"
#include "detail/nn_ops.hpp"

namespace cellvit {

namespace {

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t log2_exact(std::size_t v) {
    std::size_t l = 0;
    while ((std::size_t{1} << l) < v) ++l;
    return l;
}

} // namespace

void ModelConfig::validate() const {
    if (depth == 0 || depth % 4 != 0)
        throw DepthNotDivisibleBy4("encoder depth " + std::to_string(depth) +
                                   " must be a positive multiple of 4");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
        throw ShapeMismatch("embed_dim " + std::to_string(embed_dim) +
                            " must be divisible by heads " + std::to_string(heads));
    if (patch_size < 1 || !is_power_of_two(patch_size))
        throw ShapeMismatch("patch_size must be a power of two >= 1");
    if (in_channels == 0 || num_nuclei_classes < 2 || num_tissue_classes == 0)
        throw ShapeMismatch("channel/class counts must be positive (nuclei classes >= 2)");
    if (trained_pos_grid == 0)
        throw ShapeMismatch("trained_pos_grid must be >= 1");
    if (decoder_widths.size() != log2_exact(patch_size) || decoder_widths.empty())
        throw ShapeMismatch("decoder_widths size " + std::to_string(decoder_widths.size()) +
                            " must equal log2(patch_size) = " +
                            std::to_string(log2_exact(patch_size)));
    for (std::size_t wd : decoder_widths)
        if (wd == 0) throw ShapeMismatch("decoder widths must be >= 1");
}

ModelConfig vit_s_config() {
    ModelConfig cfg;
    cfg.patch_size = 16;
    cfg.embed_dim = 384;
    cfg.depth = 12;
    cfg.heads = 6;
    return cfg;
}

const TensorF32& Weights::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw IndexOutOfRange("missing weight tensor: " + name);
    return it->second;
}

bool Weights::operator==(const Weights& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = other.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b) {
        if (a->first != b->first) return false;
        if (a->second.shape() != b->second.shape()) return false;
        if (a->second.storage() != b->second.storage()) return false;
    }
    return true;
}

namespace {

// Creation order below is fixed; together with the splitmix stream it makes
// init_weights reproducible bit-for-bit across platforms.
struct Initializer {
    detail::SplitMix64 rng;
    Weights& out;

    void kernel(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in) {
        TensorF32 t(shape);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < t.element_count(); ++i)
            t[i] = rng.uniform_symmetric(bound);
        out.put(name, std::move(t));
    }
    void zeros(const std::string& name, std::vector<std::size_t> shape) {
        out.put(name, TensorF32(std::move(shape), 0.0f));
    }
    void ones(const std::string& name, std::vector<std::size_t> shape) {
        out.put(name, TensorF32(std::move(shape), 1.0f));
    }
    void linear(const std::string& base, std::size_t in, std::size_t n) {
        kernel(base + ".w", {in, n}, in);
        zeros(base + ".b", {n});
    }
    void conv3(const std::string& base, std::size_t cin, std::size_t cout) {
        kernel(base + ".w", {3, 3, cin, cout}, 9 * cin);
        zeros(base + ".b", {cout});
    }
    void deconv2(const std::string& base, std::size_t cin, std::size_t cout) {
        kernel(base + ".w", {2, 2, cin, cout}, 4 * cin);
        zeros(base + ".b", {cout});
    }
};

} // namespace

Weights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Weights w;
    Initializer init{detail::SplitMix64(seed), w};

    const std::size_t d = cfg.embed_dim;
    const std::size_t g = cfg.trained_pos_grid;
    const std::size_t token_len = cfg.patch_size * cfg.patch_size * cfg.in_channels;

    // Architecture snapshot; the head count in particular cannot be
    // recovered from the weight shapes alone.
    {
        TensorF32 meta({std::size_t{8}});
        meta[0] = static_cast<float>(cfg.patch_size);
        meta[1] = static_cast<float>(cfg.embed_dim);
        meta[2] = static_cast<float>(cfg.depth);
        meta[3] = static_cast<float>(cfg.heads);
        meta[4] = static_cast<float>(cfg.in_channels);
        meta[5] = static_cast<float>(cfg.num_nuclei_classes);
        meta[6] = static_cast<float>(cfg.num_tissue_classes);
        meta[7] = static_cast<float>(cfg.trained_pos_grid);
        w.put("meta.config", std::move(meta));
    }

    init.kernel("embed.proj", {token_len, d}, token_len);
    init.kernel("embed.cls", {1, d}, d);
    init.kernel("embed.pos", {g * g + 1, d}, d);

    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "enc." + std::to_string(i) + ".";
        init.ones(p + "ln1.g", {d});
        init.zeros(p + "ln1.b", {d});
        init.linear(p + "qkv", d, 3 * d);
        init.linear(p + "out", d, d);
        init.ones(p + "ln2.g", {d});
        init.zeros(p + "ln2.b", {d});
        init.linear(p + "fc1", d, cfg.mlp_dim());
        init.linear(p + "fc2", cfg.mlp_dim(), d);
    }

    init.linear("tissue", d, cfg.num_tissue_classes);

    const auto& widths = cfg.decoder_widths;
    const std::size_t stages = cfg.decoder_stages();
    const std::size_t last = widths[stages - 1];

    // Shared skip transformations: stem convs plus the per-level
    // deconv/conv chains that lift the token grid to each fusion scale.
    init.conv3("stem.c1", cfg.in_channels, last);
    init.conv3("stem.c2", last, last);
    for (std::size_t s = 0; s + 1 < stages && s < 3; ++s) {
        const std::size_t level = 2 - s;
        const std::size_t wt = widths[s];
        const std::string p = "skipproj." + std::to_string(level) + ".";
        init.deconv2(p + "d0", d, wt);
        for (std::size_t j = 1; j <= s; ++j) {
            init.conv3(p + "c" + std::to_string(j - 1), wt, wt);
            init.deconv2(p + "d" + std::to_string(j), wt, wt);
        }
    }

    for (const char* br : {"np", "hv", "nt"}) {
        const std::string base = std::string("dec.") + br + ".";
        for (std::size_t s = 0; s < stages; ++s) {
            const std::size_t cin = s == 0 ? d : widths[s - 1];
            init.deconv2(base + "up" + std::to_string(s), cin, widths[s]);
            const bool fused = (s + 1 == stages) || (s < 3 && s + 1 < stages);
            const std::size_t blk_in = fused ? 2 * widths[s] : widths[s];
            init.conv3(base + "blk" + std::to_string(s) + ".c1", blk_in, widths[s]);
            init.conv3(base + "blk" + std::to_string(s) + ".c2", widths[s], widths[s]);
        }
        std::size_t out_ch = 2;
        if (std::string(br) == "nt") out_ch = cfg.num_nuclei_classes;
        init.linear(base + "head", last, out_ch);
    }

    return w;
}

} // namespace cellvit
