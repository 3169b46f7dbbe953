#pragma once

#include <string>

#include "cellvit/postproc.hpp"
#include "cellvit/tensor.hpp"

namespace cellvit {

/// CVTF raw-tile container: magic "CVTF", u32 version, u8 rank, u32
/// extents, little-endian row-major payload, trailing CRC32. Version 1
/// carries f32 data, version 2 the integer variant (i32) used for
/// instance-label maps.
void write_cvtf(const TensorF32& tensor, const std::string& path);
TensorF32 read_cvtf(const std::string& path);

/// Integer-variant round trip for instance maps. Rank 2 stores labels only;
/// rank 3 (H, W, 2) adds a per-pixel class channel.
void write_cvtf_labels(const InstanceMap& inst, const std::string& path, bool with_classes);
InstanceMap read_cvtf_labels(const std::string& path);

/// Tile manifest JSON for DirectoryTileSource:
/// {"wsi_width","wsi_height","tile_size","overlap","mpp","tiles":[{"row","col","file"}]}
struct TileManifest {
    std::int64_t wsi_width = 0, wsi_height = 0, tile_size = 0, overlap = 0;
    double mpp = 0.25;
    struct Entry {
        std::int64_t row = 0, col = 0;
        std::string file;
    };
    std::vector<Entry> tiles;

    static TileManifest from_json(const std::string& text);
    std::string to_json() const;
};

} // namespace cellvit
