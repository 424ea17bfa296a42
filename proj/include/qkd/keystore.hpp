#pragma once

// Append-only secure-key store. One file per session directory, holding one
// record per completed epoch: "QKEY" magic, epoch id, bit count, then the
// key packed eight bits per byte (first key bit in the high bit).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qkd/bits.hpp"
#include "qkd/core.hpp"
#include "qkd/errors.hpp"

namespace qkd {

inline constexpr char keystore_magic[4] = {'Q', 'K', 'E', 'Y'};
inline constexpr const char* keystore_filename = "keys.qkey";

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
    out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
    out.write(b, 8);
}

inline bool get_u32(std::istream& in, std::uint32_t& v) {
    char b[4];
    if (!in.read(b, 4)) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(b[i])} << (8 * i);
    return true;
}

inline bool get_u64(std::istream& in, std::uint64_t& v) {
    char b[8];
    if (!in.read(b, 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(b[i])} << (8 * i);
    return true;
}

}  // namespace detail

inline void append_key(const std::filesystem::path& dir, const KeyBuffer& key) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / keystore_filename, std::ios::binary | std::ios::app);
    if (!out) throw ConfigError("cannot open key store in " + dir.string());
    out.write(keystore_magic, 4);
    detail::put_u32(out, key.epoch_id);
    detail::put_u64(out, key.bits.size());
    const auto packed = pack_bits(key.bits);
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size()));
    if (!out) throw ConfigError("key store write failed in " + dir.string());
}

inline std::vector<KeyBuffer> read_keystore(const std::filesystem::path& dir) {
    std::vector<KeyBuffer> keys;
    std::ifstream in(dir / keystore_filename, std::ios::binary);
    if (!in) return keys;
    char magic[4];
    while (in.read(magic, 4)) {
        if (std::string(magic, 4) != std::string(keystore_magic, 4))
            throw FramingError("bad key store record magic");
        KeyBuffer key;
        key.stage = KeyStage::secure;
        std::uint64_t nbits = 0;
        if (!detail::get_u32(in, key.epoch_id) || !detail::get_u64(in, nbits))
            throw FramingError("truncated key store record");
        if (nbits > (1ull << 32)) throw FramingError("implausible key length in store");
        std::vector<std::uint8_t> packed((nbits + 7) / 8);
        if (!in.read(reinterpret_cast<char*>(packed.data()),
                     static_cast<std::streamsize>(packed.size())))
            throw FramingError("truncated key store record");
        key.bits = unpack_bits(packed, static_cast<std::size_t>(nbits));
        keys.push_back(std::move(key));
    }
    return keys;
}

}  // namespace qkd
