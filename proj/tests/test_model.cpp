#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cellvit/errors.hpp"
#include "cellvit/model.hpp"
#include "support.hpp"

using namespace cellvit;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.patch_size = 16;
    cfg.embed_dim = 16;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.trained_pos_grid = 4;
    cfg.decoder_widths = {8, 8, 8, 8};
    return cfg;
}

TensorF32 random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
    oracle::Rng rng(seed);
    TensorF32 img({h, w, c});
    for (std::size_t i = 0; i < img.element_count(); ++i)
        img[i] = static_cast<float>(rng.uniform());
    return img;
}

} // namespace

TEST_CASE("patchify token arithmetic") {
    ModelConfig cfg = tiny_config();
    const TensorF32 t32 = patchify(random_image(32, 32, 3, 1), cfg);
    CHECK(t32.extent(0) == 4);
    CHECK(t32.extent(1) == 16 * 16 * 3);

    const TensorF32 t256 = patchify(random_image(256, 256, 3, 2), cfg);
    CHECK(t256.extent(0) == 256);
}

TEST_CASE("patchify raster flattening on a 2x2 image") {
    ModelConfig cfg = tiny_config();
    cfg.patch_size = 1;
    cfg.in_channels = 1;
    TensorF32 img({2, 2, 1}, {1.0f, 2.0f, 3.0f, 4.0f});
    const TensorF32 tokens = patchify(img, cfg);
    REQUIRE(tokens.extent(0) == 4);
    REQUIRE(tokens.extent(1) == 1);
    CHECK(tokens[0] == 1.0f);
    CHECK(tokens[1] == 2.0f);
    CHECK(tokens[2] == 3.0f);
    CHECK(tokens[3] == 4.0f);
}

TEST_CASE("patchify rejects non-divisible input") {
    ModelConfig cfg = tiny_config();
    CHECK_THROWS_AS(patchify(random_image(33, 32, 3, 3), cfg), NonDivisibleInput);
}

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config();
    cfg.depth = 6;
    CHECK_THROWS_AS(cfg.validate(), DepthNotDivisibleBy4);
    cfg = tiny_config();
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ShapeMismatch);
    CHECK(vit_s_config().embed_dim == 384);
    CHECK(vit_s_config().depth == 12);
}

TEST_CASE("embed with zero weights leaves only the class token") {
    ModelConfig cfg = tiny_config();
    Weights w;
    const std::size_t tl = cfg.patch_size * cfg.patch_size * cfg.in_channels;
    w.put("embed.proj", TensorF32({tl, cfg.embed_dim}, 0.0f));
    TensorF32 cls({std::size_t{1}, cfg.embed_dim}, 0.0f);
    cls[3] = 2.5f;
    w.put("embed.cls", cls);
    w.put("embed.pos",
          TensorF32({cfg.trained_pos_grid * cfg.trained_pos_grid + 1, cfg.embed_dim}, 0.0f));

    const TensorF32 tokens = patchify(random_image(64, 64, 3, 4), cfg);
    const TokenSequence seq = embed(tokens, w, cfg, 4, 4);
    CHECK(seq.tokens.extent(0) == 17);
    CHECK(seq.tokens.at2(0, 3) == 2.5f);
    for (std::size_t i = 1; i < 17; ++i)
        for (std::size_t k = 0; k < cfg.embed_dim; ++k) CHECK(seq.tokens.at2(i, k) == 0.0f);
}

TEST_CASE("positional table resize to its own grid is bit-identical") {
    oracle::Rng rng(5);
    const std::size_t g = 16, d = 8;
    TensorF32 table({g * g + 1, d});
    for (std::size_t i = 0; i < table.element_count(); ++i)
        table[i] = static_cast<float>(rng.uniform());
    const TensorF32 same = interpolate_pos_table(table, g, g, g);
    CHECK(same.storage() == table.storage());
}

TEST_CASE("positional interpolation preserves corners and matches a scalar resampler") {
    oracle::Rng rng(6);
    const std::size_t g = 16, d = 4, runtime = 64;
    TensorF32 table({g * g + 1, d});
    for (std::size_t i = 0; i < table.element_count(); ++i)
        table[i] = static_cast<float>(rng.uniform() * 2.0 - 1.0);

    const TensorF32 out = interpolate_pos_table(table, g, runtime, runtime);
    REQUIRE(out.extent(0) == runtime * runtime + 1);

    // class token untouched
    for (std::size_t k = 0; k < d; ++k) CHECK(out.at2(0, k) == table.at2(0, k));

    // corners of the runtime grid equal the original corners exactly
    const auto corner = [&](std::size_t r, std::size_t c, const TensorF32& t, std::size_t grid) {
        return t.data() + (1 + r * grid + c) * d;
    };
    const std::size_t rg = runtime - 1, sg = g - 1;
    for (std::size_t k = 0; k < d; ++k) {
        CHECK(corner(0, 0, out, runtime)[k] == corner(0, 0, table, g)[k]);
        CHECK(corner(0, rg, out, runtime)[k] == corner(0, sg, table, g)[k]);
        CHECK(corner(rg, 0, out, runtime)[k] == corner(sg, 0, table, g)[k]);
        CHECK(corner(rg, rg, out, runtime)[k] == corner(sg, sg, table, g)[k]);
    }

    // full grid against an independent double-precision resampler
    for (std::size_t r = 0; r < runtime; ++r) {
        for (std::size_t c = 0; c < runtime; ++c) {
            const double sr = static_cast<double>(r) * (g - 1) / (runtime - 1);
            const double sc = static_cast<double>(c) * (g - 1) / (runtime - 1);
            const std::size_t r0 = static_cast<std::size_t>(sr), c0 = static_cast<std::size_t>(sc);
            const std::size_t r1 = std::min(r0 + 1, g - 1), c1 = std::min(c0 + 1, g - 1);
            const double fr = sr - static_cast<double>(r0), fc = sc - static_cast<double>(c0);
            for (std::size_t k = 0; k < d; ++k) {
                const double v00 = table.at2(1 + r0 * g + c0, k);
                const double v01 = table.at2(1 + r0 * g + c1, k);
                const double v10 = table.at2(1 + r1 * g + c0, k);
                const double v11 = table.at2(1 + r1 * g + c1, k);
                const double expect =
                    (v00 * (1 - fc) + v01 * fc) * (1 - fr) + (v10 * (1 - fc) + v11 * fc) * fr;
                CHECK(out.at2(1 + r * runtime + c, k) == doctest::Approx(expect).epsilon(1e-5));
            }
        }
    }
}

namespace {

// Independent double-precision transformer forward for a tiny sequence.
struct ScalarRef {
    std::size_t d, heads, mlp;
    const Weights& w;

    std::vector<double> layer_norm(const std::vector<double>& x, std::size_t rows,
                                   const std::string& g, const std::string& b) const {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < rows; ++i) {
            double mean = 0.0;
            for (std::size_t k = 0; k < d; ++k) mean += x[i * d + k];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double dv = x[i * d + k] - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + 1e-6);
            for (std::size_t k = 0; k < d; ++k)
                out[i * d + k] = (x[i * d + k] - mean) * inv * w.at(g)[k] + w.at(b)[k];
        }
        return out;
    }

    std::vector<double> matmul(const std::vector<double>& a, const TensorF32& m,
                               std::size_t rows) const {
        const std::size_t k = m.extent(0), n = m.extent(1);
        std::vector<double> out(rows * n, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t j = 0; j < n; ++j)
                    out[i * n + j] += a[i * k + kk] * m[kk * n + j];
        return out;
    }

    void block(std::vector<double>& z, std::size_t rows, const std::string& p) const {
        const auto norm = layer_norm(z, rows, p + "ln1.g", p + "ln1.b");
        auto qkv = matmul(norm, w.at(p + "qkv.w"), rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < 3 * d; ++j) qkv[i * 3 * d + j] += w.at(p + "qkv.b")[j];

        const std::size_t dh = d / heads;
        std::vector<double> attn(rows * d, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < rows; ++i) {
                std::vector<double> scores(rows);
                double mx = -1e300;
                for (std::size_t j = 0; j < rows; ++j) {
                    double dot = 0.0;
                    for (std::size_t t = 0; t < dh; ++t)
                        dot += qkv[i * 3 * d + h * dh + t] * qkv[j * 3 * d + d + h * dh + t];
                    scores[j] = dot / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, scores[j]);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j < rows; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    sum += scores[j];
                }
                for (std::size_t j = 0; j < rows; ++j)
                    for (std::size_t t = 0; t < dh; ++t)
                        attn[i * d + h * dh + t] +=
                            scores[j] / sum * qkv[j * 3 * d + 2 * d + h * dh + t];
            }
        }
        auto proj = matmul(attn, w.at(p + "out.w"), rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                z[i * d + j] += proj[i * d + j] + w.at(p + "out.b")[j];

        const auto norm2 = layer_norm(z, rows, p + "ln2.g", p + "ln2.b");
        auto hidden = matmul(norm2, w.at(p + "fc1.w"), rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < mlp; ++j) {
                const double v = hidden[i * mlp + j] + w.at(p + "fc1.b")[j];
                hidden[i * mlp + j] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
            }
        auto out = matmul(hidden, w.at(p + "fc2.w"), rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                z[i * d + j] += out[i * d + j] + w.at(p + "fc2.b")[j];
    }
};

} // namespace

TEST_CASE("encode matches an independent scalar transformer on a 2-token sequence") {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.depth = 4;
    const Weights w = init_weights(cfg, 99);

    TokenSequence seq;
    seq.grid_rows = 1;
    seq.grid_cols = 2;
    seq.tokens = TensorF32({std::size_t{3}, cfg.embed_dim});
    oracle::Rng rng(7);
    for (std::size_t i = 0; i < seq.tokens.element_count(); ++i)
        seq.tokens[i] = static_cast<float>(rng.uniform() * 2.0 - 1.0);

    auto [final_seq, skips] = encode(seq, w, cfg);

    ScalarRef ref{cfg.embed_dim, cfg.heads, cfg.mlp_dim(), w};
    std::vector<double> z(seq.tokens.storage().begin(), seq.tokens.storage().end());
    std::vector<std::vector<double>> ref_skips;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        ref.block(z, 3, "enc." + std::to_string(i) + ".");
        ref_skips.push_back(z);
    }

    for (std::size_t i = 0; i < 3 * cfg.embed_dim; ++i)
        CHECK(final_seq.tokens[i] == doctest::Approx(z[i]).epsilon(2e-4));
    // L=4 taps every block; skip tensors drop the class-token row.
    for (std::size_t lvl = 0; lvl < 4; ++lvl) {
        REQUIRE(skips.levels[lvl].shape() == std::vector<std::size_t>{1, 2, cfg.embed_dim});
        for (std::size_t i = 0; i < 2 * cfg.embed_dim; ++i)
            CHECK(skips.levels[lvl][i] ==
                  doctest::Approx(ref_skips[lvl][cfg.embed_dim + i]).epsilon(2e-4));
    }
}

TEST_CASE("encode with zero weights is the identity and all skips agree") {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = 4;
    cfg.heads = 2;
    cfg.depth = 4;

    Weights w;
    const std::size_t d = cfg.embed_dim;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "enc." + std::to_string(i) + ".";
        w.put(p + "ln1.g", TensorF32({d}, 1.0f));
        w.put(p + "ln1.b", TensorF32({d}, 0.0f));
        w.put(p + "qkv.w", TensorF32({d, 3 * d}, 0.0f));
        w.put(p + "qkv.b", TensorF32({3 * d}, 0.0f));
        w.put(p + "out.w", TensorF32({d, d}, 0.0f));
        w.put(p + "out.b", TensorF32({d}, 0.0f));
        w.put(p + "ln2.g", TensorF32({d}, 1.0f));
        w.put(p + "ln2.b", TensorF32({d}, 0.0f));
        w.put(p + "fc1.w", TensorF32({d, cfg.mlp_dim()}, 0.0f));
        w.put(p + "fc1.b", TensorF32({cfg.mlp_dim()}, 0.0f));
        w.put(p + "fc2.w", TensorF32({cfg.mlp_dim(), d}, 0.0f));
        w.put(p + "fc2.b", TensorF32({d}, 0.0f));
    }

    TokenSequence seq;
    seq.grid_rows = 1;
    seq.grid_cols = 2;
    seq.tokens = TensorF32({std::size_t{3}, d});
    oracle::Rng rng(8);
    for (std::size_t i = 0; i < seq.tokens.element_count(); ++i)
        seq.tokens[i] = static_cast<float>(rng.uniform() * 2.0 - 1.0);

    auto [final_seq, skips] = encode(seq, w, cfg);
    CHECK(final_seq.tokens.storage() == seq.tokens.storage());
    for (std::size_t lvl = 1; lvl < 4; ++lvl)
        CHECK(skips.levels[lvl].storage() == skips.levels[0].storage());
    for (std::size_t i = 0; i < 2 * d; ++i)
        CHECK(skips.levels[0][i] == seq.tokens[d + i]);
}

TEST_CASE("skip taps land at L/4 boundaries for L=12") {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = 4;
    cfg.heads = 2;
    cfg.depth = 12;
    cfg.trained_pos_grid = 2;

    // Zero weights except per-block fc2 biases: block i adds 2^i to every
    // channel, so the tap depth is readable from the skip values.
    Weights w;
    const std::size_t d = cfg.embed_dim;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "enc." + std::to_string(i) + ".";
        w.put(p + "ln1.g", TensorF32({d}, 1.0f));
        w.put(p + "ln1.b", TensorF32({d}, 0.0f));
        w.put(p + "qkv.w", TensorF32({d, 3 * d}, 0.0f));
        w.put(p + "qkv.b", TensorF32({3 * d}, 0.0f));
        w.put(p + "out.w", TensorF32({d, d}, 0.0f));
        w.put(p + "out.b", TensorF32({d}, 0.0f));
        w.put(p + "ln2.g", TensorF32({d}, 1.0f));
        w.put(p + "ln2.b", TensorF32({d}, 0.0f));
        w.put(p + "fc1.w", TensorF32({d, cfg.mlp_dim()}, 0.0f));
        w.put(p + "fc1.b", TensorF32({cfg.mlp_dim()}, 0.0f));
        w.put(p + "fc2.w", TensorF32({cfg.mlp_dim(), d}, 0.0f));
        w.put(p + "fc2.b", TensorF32({d}, static_cast<float>(1 << i)));
    }

    TokenSequence seq;
    seq.grid_rows = seq.grid_cols = 2;
    seq.tokens = TensorF32({std::size_t{5}, d}, 0.0f);
    auto [final_seq, skips] = encode(seq, w, cfg);

    // Cumulative bias after block k (1-indexed) is 2^k - 1.
    CHECK(skips.levels[0][0] == doctest::Approx(7.0));    // after block 3
    CHECK(skips.levels[1][0] == doctest::Approx(63.0));   // after block 6
    CHECK(skips.levels[2][0] == doctest::Approx(511.0));  // after block 9
    CHECK(skips.levels[3][0] == doctest::Approx(4095.0)); // after block 12
    CHECK(final_seq.tokens[0] == doctest::Approx(4095.0));
}

TEST_CASE("decode resolution contract and zero-weight softmax") {
    ModelConfig cfg = tiny_config();
    const Weights w = init_weights(cfg, 11);
    const TensorF32 img = random_image(32, 32, 3, 12);
    const PredictionBundle out = forward(img, w, cfg);

    CHECK(out.np_map.shape() == std::vector<std::size_t>{32, 32, 2});
    CHECK(out.hv_map.shape() == std::vector<std::size_t>{32, 32, 2});
    CHECK(out.nt_map.shape() == std::vector<std::size_t>{32, 32, cfg.num_nuclei_classes});
    CHECK(out.tissue_logits.element_count() == 19);
    CHECK(out.tokens_final.shape() == std::vector<std::size_t>{4, cfg.embed_dim});

    // All-zero decoder weights give uniform softmax.
    Weights zero = w;
    for (auto& [name, tensor] : zero.tensors())
        if (name.rfind("dec.", 0) == 0 || name.rfind("stem.", 0) == 0 ||
            name.rfind("skipproj.", 0) == 0)
            std::fill(tensor.storage().begin(), tensor.storage().end(), 0.0f);
    const PredictionBundle flat = forward(img, zero, cfg);
    for (std::size_t i = 0; i < 32 * 32; ++i) {
        CHECK(flat.np_map[i * 2] == doctest::Approx(0.5));
        CHECK(flat.np_map[i * 2 + 1] == doctest::Approx(0.5));
    }
}

TEST_CASE("forward is deterministic and softmax maps normalize") {
    ModelConfig cfg = tiny_config();
    const Weights w = init_weights(cfg, 21);
    const TensorF32 img = random_image(64, 64, 3, 22);

    const PredictionBundle a = forward(img, w, cfg);
    const PredictionBundle b = forward(img, w, cfg);
    CHECK(a.np_map.storage() == b.np_map.storage());
    CHECK(a.hv_map.storage() == b.hv_map.storage());
    CHECK(a.nt_map.storage() == b.nt_map.storage());
    CHECK(a.tissue_logits.storage() == b.tissue_logits.storage());
    CHECK(a.tokens_final.storage() == b.tokens_final.storage());

    for (std::size_t i = 0; i < 64 * 64; ++i) {
        const double np_sum = a.np_map[i * 2] + a.np_map[i * 2 + 1];
        CHECK(std::abs(np_sum - 1.0) < 1e-4);
        double nt_sum = 0.0;
        for (std::size_t c = 0; c < cfg.num_nuclei_classes; ++c)
            nt_sum += a.nt_map[i * cfg.num_nuclei_classes + c];
        CHECK(std::abs(nt_sum - 1.0) < 1e-4);
        CHECK(a.hv_map[i * 2] >= -1.0f);
        CHECK(a.hv_map[i * 2] <= 1.0f);
    }
}

TEST_CASE("CVTW weight files round-trip bit-exactly") {
    ModelConfig cfg = tiny_config();
    const Weights w = init_weights(cfg, 31);
    const std::string path = (std::filesystem::temp_directory_path() / "w_test.cvtw").string();
    save_weights(w, path);
    const Weights back = load_weights(path);
    CHECK(back == w);
    std::filesystem::remove(path);
}

TEST_CASE("CVTW rejects corruption") {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = 8;
    cfg.heads = 2;
    const Weights w = init_weights(cfg, 32);
    const auto dir = std::filesystem::temp_directory_path();

    const std::string good = (dir / "w_good.cvtw").string();
    save_weights(w, good);

    { // truncation
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out((dir / "w_trunc.cvtw").string(), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_weights((dir / "w_trunc.cvtw").string()), ChecksumMismatch);

    { // wrong magic
        std::ofstream out((dir / "w_magic.cvtw").string(), std::ios::binary);
        out << "NOPE" << std::string(64, '\0');
    }
    CHECK_THROWS_AS(load_weights((dir / "w_magic.cvtw").string()), BadMagic);

    { // future version with a valid checksum
        std::vector<std::uint8_t> buf = {'C', 'V', 'T', 'W', 9, 0, 0, 0, 0, 0, 0, 0};
        std::uint32_t crc = 0xFFFFFFFFu;
        for (std::uint8_t byte : buf) {
            crc ^= byte;
            for (int k = 0; k < 8; ++k) crc = (crc & 1u) ? 0xEDB88320u ^ (crc >> 1) : crc >> 1;
        }
        crc ^= 0xFFFFFFFFu;
        for (int k = 0; k < 4; ++k) buf.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
        std::ofstream out((dir / "w_version.cvtw").string(), std::ios::binary);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    CHECK_THROWS_AS(load_weights((dir / "w_version.cvtw").string()), VersionUnsupported);

    std::filesystem::remove(good);
    std::filesystem::remove((dir / "w_trunc.cvtw").string());
    std::filesystem::remove((dir / "w_magic.cvtw").string());
    std::filesystem::remove((dir / "w_version.cvtw").string());
}
