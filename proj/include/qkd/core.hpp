#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qkd/ticks.hpp"

namespace qkd {

// Passive analyzer output channels. H/V form the Z basis, +/- the X basis.
enum class Channel : std::uint8_t { h = 0, v = 1, plus = 2, minus = 3 };

enum class Basis : std::uint8_t { z = 0, x = 1 };

constexpr const char* channel_name(Channel c) {
    switch (c) {
    case Channel::h: return "H";
    case Channel::v: return "V";
    case Channel::plus: return "+";
    default: return "-";
    }
}

struct BasisBit {
    Basis basis;
    std::uint8_t bit;
};

// H -> (Z,0), V -> (Z,1), + -> (X,0), - -> (X,1)
constexpr BasisBit channel_to_basis_bit(Channel c) {
    switch (c) {
    case Channel::h: return {Basis::z, 0};
    case Channel::v: return {Basis::z, 1};
    case Channel::plus: return {Basis::x, 0};
    default: return {Basis::x, 1};
    }
}

constexpr Channel channel_from_basis_bit(Basis basis, unsigned bit) {
    if (basis == Basis::z) return bit ? Channel::v : Channel::h;
    return bit ? Channel::minus : Channel::plus;
}

// Polarization axis of the channel's bit-0 outcome, for a box rotated by
// rotation_deg. The bit-1 outcome is orthogonal.
constexpr double channel_axis_deg(Channel c, double rotation_deg) {
    switch (c) {
    case Channel::h: return rotation_deg;
    case Channel::v: return rotation_deg + 90.0;
    case Channel::plus: return rotation_deg + 45.0;
    default: return rotation_deg + 135.0;
    }
}

struct DetectionEvent {
    Tick time;
    Channel channel;

    friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

struct CoincidentPair {
    Tick alice_time;
    Tick bob_time;
    Channel alice_channel;
    Channel bob_channel;

    friend bool operator==(const CoincidentPair&, const CoincidentPair&) = default;
};

enum class KeyStage : std::uint8_t { raw = 0, sifted = 1, corrected = 2, secure = 3 };

struct KeyBuffer {
    std::vector<std::uint8_t> bits; // one bit per element
    KeyStage stage = KeyStage::raw;
    std::uint32_t epoch_id = 0;

    std::size_t size() const { return bits.size(); }
    bool empty() const { return bits.empty(); }
};

// counts[bob_channel][alice_channel]
struct CoincidenceMatrix {
    std::array<std::array<std::uint64_t, 4>, 4> counts{};

    std::uint64_t& at(Channel bob, Channel alice) {
        return counts[static_cast<std::size_t>(bob)][static_cast<std::size_t>(alice)];
    }
    std::uint64_t at(Channel bob, Channel alice) const {
        return counts[static_cast<std::size_t>(bob)][static_cast<std::size_t>(alice)];
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts)
            for (auto c : row) t += c;
        return t;
    }

    std::uint64_t bob_total(Channel b) const {
        std::uint64_t t = 0;
        for (auto c : counts[static_cast<std::size_t>(b)]) t += c;
        return t;
    }

    std::uint64_t alice_total(Channel a) const {
        std::uint64_t t = 0;
        for (const auto& row : counts) t += row[static_cast<std::size_t>(a)];
        return t;
    }

    // counts where both sides used the given basis
    std::uint64_t basis_block_total(Basis alice, Basis bob) const {
        std::uint64_t t = 0;
        for (int b = 0; b < 4; ++b) {
            if (channel_to_basis_bit(static_cast<Channel>(b)).basis != bob) continue;
            for (int a = 0; a < 4; ++a) {
                if (channel_to_basis_bit(static_cast<Channel>(a)).basis != alice) continue;
                t += counts[b][a];
            }
        }
        return t;
    }

    std::uint64_t same_basis_total() const {
        return basis_block_total(Basis::z, Basis::z) + basis_block_total(Basis::x, Basis::x);
    }

    CoincidenceMatrix& operator+=(const CoincidenceMatrix& o) {
        for (int b = 0; b < 4; ++b)
            for (int a = 0; a < 4; ++a) counts[b][a] += o.counts[b][a];
        return *this;
    }

    friend bool operator==(const CoincidenceMatrix&, const CoincidenceMatrix&) = default;
};

inline double binary_entropy(double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("binary_entropy: argument outside [0,1]");
    if (x == 0.0 || x == 1.0) return 0.0;
    return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

// Classical-communication accounting buckets (coincidence recovery, error
// rate estimation, error correction, privacy amplification, control plane).
enum class CommCategory : std::uint8_t {
    coincidence = 0,
    error_estimation = 1,
    error_correction = 2,
    privacy_amp = 3,
    control = 4,
};

inline constexpr std::size_t comm_category_count = 5;

inline const char* comm_category_name(CommCategory c) {
    switch (c) {
        case CommCategory::coincidence: return "coincidence";
        case CommCategory::error_estimation: return "error_estimation";
        case CommCategory::error_correction: return "error_correction";
        case CommCategory::privacy_amp: return "privacy_amp";
        case CommCategory::control: return "control";
    }
    return "?";
}

} // namespace qkd
