#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cellvit/errors.hpp"
#include "cellvit/model.hpp"
#include "detail/binary.hpp"
#include "detail/crc32.hpp"

namespace cellvit {

// CVTW container: magic "CVTW", u32 version=1, u32 tensor count, then per
// tensor: u16 name length, UTF-8 name, u8 rank, u32 extents, little-endian
// f32 payload; trailing CRC32 of all preceding bytes. All integers little
// endian.

using detail::append_bytes;
using detail::append_le;
using detail::read_le;

void save_weights(const Weights& weights, const std::string& path) {
    std::vector<std::uint8_t> buf;
    append_bytes(buf, "CVTW", 4);
    append_le<std::uint32_t>(buf, 1);
    append_le<std::uint32_t>(buf, static_cast<std::uint32_t>(weights.size()));
    for (const auto& [name, tensor] : weights.tensors()) {
        if (name.size() > 0xFFFF) throw IoError("tensor name too long: " + name);
        append_le<std::uint16_t>(buf, static_cast<std::uint16_t>(name.size()));
        append_bytes(buf, name.data(), name.size());
        buf.push_back(static_cast<std::uint8_t>(tensor.rank()));
        for (std::size_t e : tensor.shape()) append_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
        for (float f : tensor.storage()) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            append_le<std::uint32_t>(buf, bits);
        }
    }
    append_le<std::uint32_t>(buf, detail::crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

Weights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), "CVTW", 4) != 0)
        throw BadMagic("not a CVTW file: " + path);
    if (buf.size() < 16)
        throw ChecksumMismatch("truncated CVTW file: " + path);

    const std::size_t payload = buf.size() - 4;
    const std::uint32_t stored = read_le<std::uint32_t>(buf.data() + payload);
    const std::uint32_t actual = detail::crc32(buf.data(), payload);
    if (stored != actual)
        throw ChecksumMismatch("CVTW checksum mismatch in " + path);

    std::size_t pos = 4;
    auto need = [&](std::size_t n) {
        if (pos + n > payload) throw ChecksumMismatch("CVTW payload shorter than declared: " + path);
    };

    need(4);
    const std::uint32_t version = read_le<std::uint32_t>(buf.data() + pos);
    pos += 4;
    if (version != 1)
        throw VersionUnsupported("CVTW version " + std::to_string(version) + " unsupported");

    need(4);
    const std::uint32_t count = read_le<std::uint32_t>(buf.data() + pos);
    pos += 4;

    Weights w;
    for (std::uint32_t t = 0; t < count; ++t) {
        need(2);
        const std::uint16_t name_len = read_le<std::uint16_t>(buf.data() + pos);
        pos += 2;
        need(name_len);
        std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        need(1);
        const std::uint8_t rank = buf[pos++];
        if (rank < 1 || rank > 4) throw ChecksumMismatch("CVTW tensor rank out of range");
        std::vector<std::size_t> shape(rank);
        std::size_t elems = 1;
        for (std::uint8_t r = 0; r < rank; ++r) {
            need(4);
            shape[r] = read_le<std::uint32_t>(buf.data() + pos);
            pos += 4;
            elems *= shape[r];
        }
        need(elems * 4);
        std::vector<float> data(elems);
        for (std::size_t i = 0; i < elems; ++i) {
            const std::uint32_t bits = read_le<std::uint32_t>(buf.data() + pos);
            pos += 4;
            float f;
            std::memcpy(&f, &bits, 4);
            data[i] = f;
        }
        w.put(std::move(name), TensorF32(std::move(shape), std::move(data)));
    }
    return w;
}

} // namespace cellvit
