#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qkd {

// Bit sequences are stored one bit per byte (values 0/1) while being worked
// on and packed MSB-first per byte for files and the wire.

inline std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> bits) {
    std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) out[i >> 3] |= static_cast<std::uint8_t>(0x80u >> (i & 7));
    }
    return out;
}

inline std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count) {
    std::vector<std::uint8_t> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = (bytes[i >> 3] >> (7 - (i & 7))) & 1u;
    }
    return out;
}

inline unsigned parity_of(std::span<const std::uint8_t> bits) {
    unsigned p = 0;
    for (auto b : bits) p ^= b;
    return p & 1u;
}

inline std::uint64_t count_ones(std::span<const std::uint8_t> bits) {
    std::uint64_t n = 0;
    for (auto b : bits) n += b;
    return n;
}

} // namespace qkd
