#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace cellvit::detail {

// CRC-32 (IEEE 802.3, reflected 0xEDB88320), the checksum trailing the
// CVTW and CVTF containers.
inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32_update(std::uint32_t crc, const void* bytes, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(bytes);
    const auto& table = crc32_table();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const void* bytes, std::size_t len) {
    return crc32_update(0, bytes, len);
}

} // namespace cellvit::detail
