#pragma once

// Timetag stream files: magic "TTAG", version byte, 8-byte little-endian
// event count, then 9 bytes per event (8-byte tick + channel code). Ground
// truth goes to a CSV alongside.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/photon_sim.hpp"

namespace qkd {

inline constexpr char timetag_magic[4] = {'T', 'T', 'A', 'G'};
inline constexpr std::uint8_t timetag_version = 1;

namespace detail {

inline void put_u64le(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline std::uint64_t get_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void write_timetag_file(const std::filesystem::path& path,
                               std::span<const DetectionEvent> events) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    std::uint8_t header[13];
    header[0] = 'T';
    header[1] = 'T';
    header[2] = 'A';
    header[3] = 'G';
    header[4] = timetag_version;
    detail::put_u64le(header + 5, events.size());
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    std::uint8_t rec[9];
    for (const auto& e : events) {
        detail::put_u64le(rec, e.time);
        rec[8] = static_cast<std::uint8_t>(e.channel);
        out.write(reinterpret_cast<const char*>(rec), sizeof rec);
    }
    if (!out) throw ConfigError("write failed: " + path.string());
}

inline std::vector<DetectionEvent> read_timetag_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::uint8_t header[13];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (in.gcount() != sizeof header || header[0] != 'T' || header[1] != 'T' ||
        header[2] != 'A' || header[3] != 'G')
        throw FramingError("not a timetag file: " + path.string());
    if (header[4] != timetag_version)
        throw FramingError("unsupported timetag file version");
    const std::uint64_t count = detail::get_u64le(header + 5);
    if (count > (1ull << 40)) throw FramingError("implausible timetag event count");
    std::vector<DetectionEvent> events;
    events.reserve(count);
    std::uint8_t rec[9];
    for (std::uint64_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(rec), sizeof rec);
        if (in.gcount() != sizeof rec) throw FramingError("truncated timetag file");
        if (rec[8] > 3) throw FramingError("bad channel code in timetag file");
        events.push_back({static_cast<Tick>(detail::get_u64le(rec)), static_cast<Channel>(rec[8])});
    }
    return events;
}

inline void write_truth_csv(const std::filesystem::path& path,
                            std::span<const TruthRecord> truth) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "pair_id,alice_tick,bob_tick,alice_channel,bob_channel,alice_survived,bob_survived\n";
    for (const auto& t : truth) {
        out << t.pair_id << ',' << t.alice_tick << ',' << t.bob_tick << ','
            << static_cast<int>(t.alice_channel) << ',' << static_cast<int>(t.bob_channel) << ','
            << (t.alice_survived ? 1 : 0) << ',' << (t.bob_survived ? 1 : 0) << '\n';
    }
    if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace qkd
