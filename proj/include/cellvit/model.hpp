#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cellvit/tensor.hpp"

namespace cellvit {

/// Architecture hyperparameters of the encoder/decoder graph.
///
/// `depth` must be divisible by 4 so the skip taps land on whole blocks,
/// and `patch_size` must be a power of two so the decoder can reach full
/// resolution with doubling stages. `num_nuclei_classes` counts the
/// background channel (channel 0).
struct ModelConfig {
    std::size_t patch_size = 16;
    std::size_t embed_dim = 384;
    std::size_t depth = 12;
    std::size_t heads = 6;
    std::size_t in_channels = 3;
    std::size_t num_nuclei_classes = 6;
    std::size_t num_tissue_classes = 19;
    std::size_t trained_pos_grid = 16;
    // Channel widths of the upsampling stages, deepest first. Size must
    // equal log2(patch_size).
    std::vector<std::size_t> decoder_widths = {256, 128, 64, 32};

    std::size_t mlp_dim() const { return embed_dim * 4; }
    std::size_t decoder_stages() const { return decoder_widths.size(); }

    /// Throws DepthNotDivisibleBy4 / ShapeMismatch on invalid settings.
    void validate() const;
};

/// ViT-S as used for the in-domain pretrained encoder (D=384, L=12).
ModelConfig vit_s_config();

/// Token sequence including the class token at row 0; rows 1..N are the
/// image tokens in raster order over the (grid_rows, grid_cols) grid.
struct TokenSequence {
    TensorF32 tokens; // (N+1, D)
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;

    std::size_t image_tokens() const { return grid_rows * grid_cols; }
};

/// Encoder taps consumed by the decoders: block outputs at depths
/// {L/4, 2L/4, 3L/4, L}, class token stripped, reshaped to (H/P, W/P, D).
/// `stem` carries the full-resolution image for the stem skip path; encode
/// leaves it empty and forward fills it before decoding.
struct SkipFeatures {
    std::array<TensorF32, 4> levels;
    TensorF32 stem;
};

/// Per-tile model outputs.
struct PredictionBundle {
    TensorF32 np_map;        // (H, W, 2) softmax over background/nucleus
    TensorF32 hv_map;        // (H, W, 2) clamped to [-1, 1]
    TensorF32 nt_map;        // (H, W, num_nuclei_classes) softmax
    TensorF32 tissue_logits; // (num_tissue_classes)
    TensorF32 tokens_final;  // (N, D), final block, class token excluded
};

/// Named weight tensors; ordered map so serialization is deterministic.
class Weights {
public:
    void put(std::string name, TensorF32 t) { tensors_[std::move(name)] = std::move(t); }

    const TensorF32& at(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    std::size_t size() const { return tensors_.size(); }

    const std::map<std::string, TensorF32>& tensors() const { return tensors_; }
    std::map<std::string, TensorF32>& tensors() { return tensors_; }

    bool operator==(const Weights& other) const;

private:
    std::map<std::string, TensorF32> tensors_;
};

/// Seeded deterministic initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
/// for linear/conv kernels, zeros for biases, ones for layer-norm gains.
Weights init_weights(const ModelConfig& cfg, std::uint64_t seed);

/// CVTW container round trip. Throws BadMagic / VersionUnsupported /
/// ChecksumMismatch / IoError.
void save_weights(const Weights& weights, const std::string& path);
Weights load_weights(const std::string& path);

/// Splits an (H, W, C) image into N = HW/P^2 flattened P x P tokens in
/// raster order. Throws NonDivisibleInput when P does not divide H or W.
TensorF32 patchify(const TensorF32& image, const ModelConfig& cfg);

/// Projects flat tokens into the latent space, prepends the class token and
/// adds the positional table, bilinearly resized when the runtime grid
/// differs from the trained grid.
TokenSequence embed(const TensorF32& flat_tokens, const Weights& weights,
                    const ModelConfig& cfg, std::size_t grid_rows, std::size_t grid_cols);

/// Resizes the spatial part of a positional table (trained_grid^2+1, D) to a
/// (rows*cols+1, D) table; the class-token row is passed through. Resizing
/// to the table's own grid returns it bit-identically.
TensorF32 interpolate_pos_table(const TensorF32& table, std::size_t trained_grid,
                                std::size_t rows, std::size_t cols);

/// Runs the L pre-norm transformer blocks; returns the final sequence and
/// the four skip taps.
std::pair<TokenSequence, SkipFeatures> encode(const TokenSequence& seq, const Weights& weights,
                                              const ModelConfig& cfg);

/// Runs the three branch decoders plus the tissue head. Output maps match
/// the input image resolution exactly. `final_seq` supplies the class token
/// for the tissue logits; the stem path reads skips.stem when set, else
/// `image`.
PredictionBundle decode(const SkipFeatures& skips, const TensorF32& image,
                        const TokenSequence& final_seq, const Weights& weights,
                        const ModelConfig& cfg);

/// patchify -> embed -> encode -> decode. Deterministic given
/// (weights, input, cfg); single-threaded per call.
PredictionBundle forward(const TensorF32& image, const Weights& weights, const ModelConfig& cfg);

} // namespace cellvit
