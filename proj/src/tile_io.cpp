#include "cellvit/tile_io.hpp"

#include <cstring>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "cellvit/errors.hpp"
#include "detail/binary.hpp"
#include "detail/crc32.hpp"
#include "detail/json_writer.hpp"

namespace cellvit {

using detail::append_bytes;
using detail::append_le;
using detail::read_le;

namespace {

constexpr std::uint32_t kVersionF32 = 1;
constexpr std::uint32_t kVersionI32 = 2;

void write_container(const std::string& path, std::uint32_t version,
                     const std::vector<std::size_t>& shape,
                     const std::function<void(std::vector<std::uint8_t>&)>& payload) {
    std::vector<std::uint8_t> buf;
    append_bytes(buf, "CVTF", 4);
    append_le<std::uint32_t>(buf, version);
    buf.push_back(static_cast<std::uint8_t>(shape.size()));
    for (std::size_t e : shape) append_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
    payload(buf);
    append_le<std::uint32_t>(buf, detail::crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

struct Container {
    std::uint32_t version = 0;
    std::vector<std::size_t> shape;
    const std::uint8_t* payload = nullptr;
    std::size_t payload_len = 0;
    std::vector<std::uint8_t> buf;
};

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tile file: " + path);
    Container c;
    c.buf.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (c.buf.size() < 4 || std::memcmp(c.buf.data(), "CVTF", 4) != 0)
        throw BadMagic("not a CVTF file: " + path);
    if (c.buf.size() < 13) throw ChecksumMismatch("truncated CVTF file: " + path);

    const std::size_t body = c.buf.size() - 4;
    if (read_le<std::uint32_t>(c.buf.data() + body) != detail::crc32(c.buf.data(), body))
        throw ChecksumMismatch("CVTF checksum mismatch in " + path);

    std::size_t pos = 4;
    c.version = read_le<std::uint32_t>(c.buf.data() + pos);
    pos += 4;
    if (c.version != kVersionF32 && c.version != kVersionI32)
        throw VersionUnsupported("CVTF version " + std::to_string(c.version) + " unsupported");
    const std::uint8_t rank = c.buf[pos++];
    if (rank < 1 || rank > 4) throw ChecksumMismatch("CVTF rank out of range in " + path);
    std::size_t elems = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
        if (pos + 4 > body) throw ChecksumMismatch("CVTF header truncated: " + path);
        c.shape.push_back(read_le<std::uint32_t>(c.buf.data() + pos));
        pos += 4;
        elems *= c.shape.back();
    }
    if (pos + elems * 4 != body)
        throw ChecksumMismatch("CVTF payload size mismatch in " + path);
    c.payload = c.buf.data() + pos;
    c.payload_len = elems;
    return c;
}

} // namespace

void write_cvtf(const TensorF32& tensor, const std::string& path) {
    write_container(path, kVersionF32, tensor.shape(), [&](std::vector<std::uint8_t>& buf) {
        for (float f : tensor.storage()) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            append_le<std::uint32_t>(buf, bits);
        }
    });
}

TensorF32 read_cvtf(const std::string& path) {
    Container c = read_container(path);
    if (c.version != kVersionF32)
        throw VersionUnsupported("expected f32 CVTF (version 1) in " + path);
    std::vector<float> data(c.payload_len);
    for (std::size_t i = 0; i < c.payload_len; ++i) {
        const std::uint32_t bits = read_le<std::uint32_t>(c.payload + i * 4);
        std::memcpy(&data[i], &bits, 4);
    }
    return TensorF32(c.shape, std::move(data));
}

void write_cvtf_labels(const InstanceMap& inst, const std::string& path, bool with_classes) {
    std::vector<std::size_t> shape = with_classes
                                         ? std::vector<std::size_t>{inst.height, inst.width, 2}
                                         : std::vector<std::size_t>{inst.height, inst.width};
    write_container(path, kVersionI32, shape, [&](std::vector<std::uint8_t>& buf) {
        for (std::size_t i = 0; i < inst.labels.size(); ++i) {
            append_le<std::int32_t>(buf, inst.labels[i]);
            if (with_classes) {
                const std::int32_t id = inst.labels[i];
                const std::int32_t cls =
                    id > 0 && static_cast<std::size_t>(id) < inst.classes.size()
                        ? static_cast<std::int32_t>(inst.classes[static_cast<std::size_t>(id)])
                        : 0;
                append_le<std::int32_t>(buf, cls);
            }
        }
    });
}

InstanceMap read_cvtf_labels(const std::string& path) {
    Container c = read_container(path);
    if (c.version != kVersionI32)
        throw VersionUnsupported("expected integer CVTF (version 2) in " + path);
    const bool with_classes = c.shape.size() == 3;
    if (c.shape.size() != 2 && !(with_classes && c.shape[2] == 2))
        throw ShapeMismatch("instance-map CVTF must be rank 2 or (H, W, 2)");

    InstanceMap inst;
    inst.height = c.shape[0];
    inst.width = c.shape[1];
    const std::size_t n = inst.height * inst.width;
    inst.labels.resize(n);
    std::int32_t max_id = 0;
    std::vector<std::pair<std::int32_t, std::int32_t>> id_class;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t stride = with_classes ? 8 : 4;
        inst.labels[i] = read_le<std::int32_t>(c.payload + i * stride);
        max_id = std::max(max_id, inst.labels[i]);
        if (with_classes && inst.labels[i] > 0)
            id_class.emplace_back(inst.labels[i],
                                  read_le<std::int32_t>(c.payload + i * stride + 4));
    }
    inst.count = static_cast<std::size_t>(max_id);
    inst.classes.assign(inst.count + 1, 0);
    for (const auto& [id, cls] : id_class)
        inst.classes[static_cast<std::size_t>(id)] = static_cast<std::size_t>(cls);
    return inst;
}

TileManifest TileManifest::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TileManifest m;
    m.wsi_width = j.at("wsi_width").get<std::int64_t>();
    m.wsi_height = j.at("wsi_height").get<std::int64_t>();
    m.tile_size = j.at("tile_size").get<std::int64_t>();
    m.overlap = j.at("overlap").get<std::int64_t>();
    m.mpp = j.value("mpp", 0.25);
    for (const auto& t : j.at("tiles")) {
        Entry e;
        e.row = t.at("row").get<std::int64_t>();
        e.col = t.at("col").get<std::int64_t>();
        e.file = t.at("file").get<std::string>();
        m.tiles.push_back(std::move(e));
    }
    return m;
}

std::string TileManifest::to_json() const {
    detail::JsonWriter w;
    w.raw("{");
    w.key("mpp");
    w.fixed(mpp, 4);
    w.raw(",");
    w.key("overlap");
    w.integer(overlap);
    w.raw(",");
    w.key("tile_size");
    w.integer(tile_size);
    w.raw(",");
    w.key("tiles");
    w.raw("[");
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (i) w.raw(",");
        w.raw("{");
        w.key("col");
        w.integer(tiles[i].col);
        w.raw(",");
        w.key("file");
        w.string(tiles[i].file);
        w.raw(",");
        w.key("row");
        w.integer(tiles[i].row);
        w.raw("}");
    }
    w.raw("],");
    w.key("wsi_height");
    w.integer(wsi_height);
    w.raw(",");
    w.key("wsi_width");
    w.integer(wsi_width);
    w.raw("}");
    return w.take();
}

} // namespace cellvit
