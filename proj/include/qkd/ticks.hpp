#pragma once

#include <cmath>
#include <cstdint>

namespace qkd {

// Timetagger LSB is 156.25 ps, i.e. 6.4 ticks per nanosecond.
inline constexpr double tick_seconds = 156.25e-12;
inline constexpr double ticks_per_ns = 6.4;
inline constexpr double ticks_per_second = 6.4e9;

using Tick = std::uint64_t;

// Fractional tick values round half-up (2 ns -> 13 ticks).
inline Tick ticks_from_ns(double ns) {
    return static_cast<Tick>(std::llround(ns * ticks_per_ns));
}

inline Tick ticks_from_seconds(double s) {
    return static_cast<Tick>(std::llround(s * ticks_per_second));
}

inline double ns_from_ticks(double t) { return t / ticks_per_ns; }
inline double seconds_from_ticks(double t) { return t * tick_seconds; }

} // namespace qkd
