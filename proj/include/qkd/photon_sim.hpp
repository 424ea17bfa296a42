#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/rng.hpp"

namespace qkd {

struct SourceModel {
    double pair_rate = 0.0;    // entangled pairs emitted per second
    double singles_rate = 0.0; // photons emitted per second per side (pairs included)
    double visibility_z = 1.0;
    double visibility_x = 1.0;
    double state_phase = std::numbers::pi; // pi = singlet

    void validate() const {
        if (!(pair_rate >= 0.0)) throw ConfigError("source: pair_rate must be >= 0");
        if (!(singles_rate >= pair_rate)) throw ConfigError("source: singles_rate must be >= pair_rate");
        if (!(visibility_z >= 0.0 && visibility_z <= 1.0)) throw ConfigError("source: visibility_z outside [0,1]");
        if (!(visibility_x >= 0.0 && visibility_x <= 1.0)) throw ConfigError("source: visibility_x outside [0,1]");
        if (!std::isfinite(state_phase)) throw ConfigError("source: state_phase must be finite");
    }
};

struct LinkModel {
    double transmission = 1.0;
    double box_efficiency = 1.0;
    double quantum_efficiency = 1.0;
    // relative detector imbalance, indexed by channel code
    std::array<double, 4> channel_factor{1.0, 1.0, 1.0, 1.0};
    double background_rate = 0.0; // detected clicks per second, uniform over channels
    double dark_rate = 0.0;       // detected dark counts per second

    double end_to_end(Channel c) const {
        return transmission * box_efficiency * quantum_efficiency *
               channel_factor[static_cast<std::size_t>(c)];
    }

    double mean_end_to_end() const {
        double s = 0.0;
        for (int c = 0; c < 4; ++c) s += end_to_end(static_cast<Channel>(c));
        return s / 4.0;
    }

    void validate() const {
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!unit(transmission)) throw ConfigError("link: transmission outside [0,1]");
        if (!unit(box_efficiency)) throw ConfigError("link: box_efficiency outside [0,1]");
        if (!unit(quantum_efficiency)) throw ConfigError("link: quantum_efficiency outside [0,1]");
        for (double f : channel_factor)
            if (!unit(f)) throw ConfigError("link: channel_factor outside [0,1]");
        if (!(background_rate >= 0.0)) throw ConfigError("link: background_rate must be >= 0");
        if (!(dark_rate >= 0.0)) throw ConfigError("link: dark_rate must be >= 0");
    }
};

struct ClockModel {
    std::int64_t initial_offset = 0;        // ticks added to Bob's recorded times
    double drift = 0.0;                     // fractional rate error, sawtooth reset at resync
    double jitter_sigma = 3.0;              // ticks rms, per side
    Tick dead_time = 320;                   // same-channel dead time, ticks
    Tick resync_period = 6'400'000'000ull;  // 1 s between resync pulses

    // Bob's accumulated clock error at a true time (ticks).
    double error_at(double true_tick) const {
        return drift * std::fmod(true_tick, static_cast<double>(resync_period));
    }

    void validate() const {
        if (!(std::abs(drift) < 1e-3)) throw ConfigError("clock: |drift| must be < 1e-3");
        if (!(jitter_sigma >= 0.0 && jitter_sigma <= 64.0)) throw ConfigError("clock: jitter_sigma outside [0,64]");
        if (resync_period == 0) throw ConfigError("clock: resync_period must be > 0");
        if (dead_time > 1'000'000) throw ConfigError("clock: dead_time implausibly large");
    }
};

struct AnalyzerSetting {
    double rotation_deg = 0.0; // physical rotation of the analyzer box
};

struct TruthRecord {
    std::uint64_t pair_id;
    Tick alice_tick = 0; // recorded time, valid when the side survived
    Tick bob_tick = 0;
    Channel alice_channel;
    Channel bob_channel;
    bool alice_survived = false;
    bool bob_survived = false;
};

struct GeneratedStreams {
    std::vector<DetectionEvent> alice;
    std::vector<DetectionEvent> bob;
    std::vector<TruthRecord> truth; // pairs with at least one detection
};

namespace detail {

// P(Alice bit == Bob bit) for bit-0 analysis axes alpha, beta (radians)
// given pair visibility v and source phase.
inline double equal_bit_probability(double alpha, double beta, double v, double phase) {
    const double c = std::cos(2.0 * alpha) * std::cos(2.0 * beta) -
                     std::cos(phase) * std::sin(2.0 * alpha) * std::sin(2.0 * beta);
    return 0.5 * (1.0 - v * c);
}

struct JointTable {
    // indexed [alice_basis][bob_basis]
    std::array<std::array<double, 2>, 2> p_equal;
};

inline JointTable make_joint_table(const SourceModel& src, AnalyzerSetting a, AnalyzerSetting b) {
    constexpr double deg = std::numbers::pi / 180.0;
    JointTable t;
    for (int ba = 0; ba < 2; ++ba) {
        for (int bb = 0; bb < 2; ++bb) {
            const double alpha = (a.rotation_deg + (ba ? 45.0 : 0.0)) * deg;
            const double beta = (b.rotation_deg + (bb ? 45.0 : 0.0)) * deg;
            double v;
            if (ba == 0 && bb == 0) v = src.visibility_z;
            else if (ba == 1 && bb == 1) v = src.visibility_x;
            else v = std::sqrt(src.visibility_z * src.visibility_x);
            t.p_equal[ba][bb] = equal_bit_probability(alpha, beta, v, src.state_phase);
        }
    }
    return t;
}

} // namespace detail

// Sample the pair of analyzer outcomes for one entangled pair. Marginals are
// uniform over each side's two channels of either basis; the correlation sits
// entirely in the equal-bit probability.
inline std::pair<Channel, Channel> joint_outcome(std::uint64_t /*pair_index*/,
                                                 AnalyzerSetting alice, AnalyzerSetting bob,
                                                 const SourceModel& src, Rng& rng) {
    const auto table = detail::make_joint_table(src, alice, bob);
    const int ba = rng.bernoulli(0.5) ? 1 : 0;
    const int bb = rng.bernoulli(0.5) ? 1 : 0;
    const unsigned bit_a = rng.bernoulli(0.5) ? 1 : 0;
    const unsigned bit_b = rng.bernoulli(table.p_equal[ba][bb]) ? bit_a : (bit_a ^ 1u);
    return {channel_from_basis_bit(ba ? Basis::x : Basis::z, bit_a),
            channel_from_basis_bit(bb ? Basis::x : Basis::z, bit_b)};
}

namespace detail {

struct RawClick {
    double true_tick;
    Channel channel;
    std::int64_t truth_index; // -1 for noise and unpaired photons
};

// Sample a channel with probability proportional to the link's per-channel
// end-to-end efficiency (thinned-process channel law for detected photons).
inline Channel sample_detected_channel(const LinkModel& link, Rng& rng) {
    double w[4];
    double total = 0.0;
    for (int c = 0; c < 4; ++c) {
        w[c] = link.end_to_end(static_cast<Channel>(c));
        total += w[c];
    }
    double u = rng.uniform() * total;
    for (int c = 0; c < 3; ++c) {
        u -= w[c];
        if (u < 0.0) return static_cast<Channel>(c);
    }
    return Channel::minus;
}

// Homogeneous Poisson clicks over [0, duration_ticks), channel uniform.
inline void add_poisson_clicks(std::vector<RawClick>& out, double rate_hz, double duration_ticks,
                               Rng& rng, const LinkModel* channel_weights) {
    if (rate_hz <= 0.0) return;
    const double rate_per_tick = rate_hz * tick_seconds;
    double t = rng.exponential(rate_per_tick);
    while (t < duration_ticks) {
        Channel c = channel_weights ? sample_detected_channel(*channel_weights, rng)
                                    : static_cast<Channel>(rng.below(4));
        out.push_back({t, c, -1});
        t += rng.exponential(rate_per_tick);
    }
}

struct SideAssembly {
    std::vector<DetectionEvent> events;
    std::vector<std::int64_t> truth_index; // parallel to events
};

// Jitter, clock transform, rounding, sort, same-channel dead time.
inline SideAssembly assemble_side(std::vector<RawClick>& raw, const ClockModel& clock,
                                  bool is_bob, Rng& rng) {
    std::sort(raw.begin(), raw.end(), [](const RawClick& a, const RawClick& b) {
        if (a.true_tick != b.true_tick) return a.true_tick < b.true_tick;
        if (a.channel != b.channel) return a.channel < b.channel;
        return a.truth_index < b.truth_index;
    });

    struct Stamped {
        Tick time;
        Channel channel;
        std::int64_t truth_index;
    };
    std::vector<Stamped> stamped;
    stamped.reserve(raw.size());
    for (const auto& click : raw) {
        double t = click.true_tick;
        if (clock.jitter_sigma > 0.0) t += rng.normal(clock.jitter_sigma);
        if (is_bob) t += static_cast<double>(clock.initial_offset) + clock.error_at(click.true_tick);
        const double rounded = std::floor(t + 0.5);
        if (rounded < 0.0) continue; // recorded before tick 0, dropped
        stamped.push_back({static_cast<Tick>(rounded), click.channel, click.truth_index});
    }

    std::sort(stamped.begin(), stamped.end(), [](const Stamped& a, const Stamped& b) {
        if (a.time != b.time) return a.time < b.time;
        if (a.channel != b.channel) return a.channel < b.channel;
        return a.truth_index < b.truth_index;
    });

    SideAssembly side;
    side.events.reserve(stamped.size());
    side.truth_index.reserve(stamped.size());
    std::array<Tick, 4> last{};
    std::array<bool, 4> seen{};
    for (const auto& s : stamped) {
        const auto c = static_cast<std::size_t>(s.channel);
        if (seen[c] && s.time - last[c] < clock.dead_time) continue;
        seen[c] = true;
        last[c] = s.time;
        side.events.push_back({s.time, s.channel});
        side.truth_index.push_back(s.truth_index);
    }
    return side;
}

} // namespace detail

// Generate one session's worth of detector streams for both sides.
// Substreams are seeded independently so the pair process, each side's noise
// and each side's timing jitter are reproducible in isolation.
inline GeneratedStreams generate_streams(const SourceModel& src, const LinkModel& alice_link,
                                         const LinkModel& bob_link, const ClockModel& clock,
                                         double duration_seconds, std::uint64_t seed,
                                         AnalyzerSetting alice_setting = {},
                                         AnalyzerSetting bob_setting = {}) {
    src.validate();
    alice_link.validate();
    bob_link.validate();
    clock.validate();
    if (duration_seconds < 0.0 || !std::isfinite(duration_seconds))
        throw ConfigError("generate_streams: duration must be >= 0");
    if (duration_seconds == 0.0) return {};

    const double duration_ticks = duration_seconds * ticks_per_second;
    Rng root(seed);
    Rng rng_pairs = root.fork(1);
    Rng rng_alice = root.fork(2);
    Rng rng_bob = root.fork(3);

    GeneratedStreams out;
    std::vector<detail::RawClick> raw_a;
    std::vector<detail::RawClick> raw_b;

    // correlated pairs
    if (src.pair_rate > 0.0) {
        const auto table = detail::make_joint_table(src, alice_setting, bob_setting);
        const double rate_per_tick = src.pair_rate * tick_seconds;
        double t = rng_pairs.exponential(rate_per_tick);
        std::uint64_t pair_id = 0;
        while (t < duration_ticks) {
            const int ba = rng_pairs.bernoulli(0.5) ? 1 : 0;
            const int bb = rng_pairs.bernoulli(0.5) ? 1 : 0;
            const unsigned bit_a = rng_pairs.bernoulli(0.5) ? 1 : 0;
            const unsigned bit_b =
                rng_pairs.bernoulli(table.p_equal[ba][bb]) ? bit_a : (bit_a ^ 1u);
            const Channel ca = channel_from_basis_bit(ba ? Basis::x : Basis::z, bit_a);
            const Channel cb = channel_from_basis_bit(bb ? Basis::x : Basis::z, bit_b);
            const bool sa = rng_pairs.bernoulli(alice_link.end_to_end(ca));
            const bool sb = rng_pairs.bernoulli(bob_link.end_to_end(cb));
            if (sa || sb) {
                const auto idx = static_cast<std::int64_t>(out.truth.size());
                TruthRecord rec;
                rec.pair_id = pair_id;
                rec.alice_channel = ca;
                rec.bob_channel = cb;
                out.truth.push_back(rec);
                if (sa) raw_a.push_back({t, ca, idx});
                if (sb) raw_b.push_back({t, cb, idx});
            }
            ++pair_id;
            t += rng_pairs.exponential(rate_per_tick);
        }
    }

    // unpaired source photons, thinned to detected clicks
    const double unpaired = src.singles_rate - src.pair_rate;
    detail::add_poisson_clicks(raw_a, unpaired * alice_link.mean_end_to_end(), duration_ticks,
                               rng_alice, &alice_link);
    detail::add_poisson_clicks(raw_b, unpaired * bob_link.mean_end_to_end(), duration_ticks,
                               rng_bob, &bob_link);
    // background and dark counts arrive already-detected
    detail::add_poisson_clicks(raw_a, alice_link.background_rate, duration_ticks, rng_alice, nullptr);
    detail::add_poisson_clicks(raw_b, bob_link.background_rate, duration_ticks, rng_bob, nullptr);
    detail::add_poisson_clicks(raw_a, alice_link.dark_rate, duration_ticks, rng_alice, nullptr);
    detail::add_poisson_clicks(raw_b, bob_link.dark_rate, duration_ticks, rng_bob, nullptr);

    auto side_a = detail::assemble_side(raw_a, clock, false, rng_alice);
    auto side_b = detail::assemble_side(raw_b, clock, true, rng_bob);

    for (std::size_t i = 0; i < side_a.events.size(); ++i) {
        if (side_a.truth_index[i] >= 0) {
            auto& rec = out.truth[static_cast<std::size_t>(side_a.truth_index[i])];
            rec.alice_survived = true;
            rec.alice_tick = side_a.events[i].time;
        }
    }
    for (std::size_t i = 0; i < side_b.events.size(); ++i) {
        if (side_b.truth_index[i] >= 0) {
            auto& rec = out.truth[static_cast<std::size_t>(side_b.truth_index[i])];
            rec.bob_survived = true;
            rec.bob_tick = side_b.events[i].time;
        }
    }

    out.alice = std::move(side_a.events);
    out.bob = std::move(side_b.events);
    return out;
}

// Closed-form expectations for a configuration, used for scenario calibration
// and rate sanity checks.
struct ExpectedRates {
    double alice_singles = 0.0; // detected clicks per second
    double bob_singles = 0.0;
    double true_coincidences = 0.0; // correlated pairs inside the window, per second
    double accidentals = 0.0;
    double raw_rate = 0.0; // true + accidental
    double sifted_rate = 0.0;
    double qber_total = 0.0;
    double qber_z = 0.0;
    double qber_x = 0.0;
    double window_capture = 0.0;
    // detected-pair rate per [bob][alice] cell, accidentals included
    std::array<std::array<double, 4>, 4> cell_rates{};
};

inline ExpectedRates expected_rates(const SourceModel& src, const LinkModel& alice_link,
                                    const LinkModel& bob_link, const ClockModel& clock,
                                    Tick window = 13, AnalyzerSetting alice_setting = {},
                                    AnalyzerSetting bob_setting = {}) {
    ExpectedRates r;

    const double sa_src = src.singles_rate * alice_link.mean_end_to_end();
    const double sb_src = src.singles_rate * bob_link.mean_end_to_end();
    r.alice_singles = sa_src + alice_link.background_rate + alice_link.dark_rate;
    r.bob_singles = sb_src + bob_link.background_rate + bob_link.dark_rate;

    // probability that a correlated pair's tick difference lands inside the
    // window: difference of two jittered, rounded stamps
    const double halfw = (static_cast<double>(window) - 1.0) / 2.0;
    if (clock.jitter_sigma > 0.0) {
        const double sd = std::sqrt(2.0 * clock.jitter_sigma * clock.jitter_sigma + 1.0 / 6.0);
        r.window_capture = std::erf((halfw + 0.5) / (sd * std::numbers::sqrt2));
    } else {
        r.window_capture = 1.0;
    }

    const auto table = detail::make_joint_table(src, alice_setting, bob_setting);
    // per-channel detected singles rates, for the accidental cell split
    std::array<double, 4> rate_a{};
    std::array<double, 4> rate_b{};
    for (int c = 0; c < 4; ++c) {
        rate_a[c] = src.singles_rate / 4.0 * alice_link.end_to_end(static_cast<Channel>(c)) +
                    (alice_link.background_rate + alice_link.dark_rate) / 4.0;
        rate_b[c] = src.singles_rate / 4.0 * bob_link.end_to_end(static_cast<Channel>(c)) +
                    (bob_link.background_rate + bob_link.dark_rate) / 4.0;
    }
    const double tau = static_cast<double>(window) * tick_seconds;

    double same_basis = 0.0, errors_z = 0.0, errors_x = 0.0, z_total = 0.0, x_total = 0.0;
    for (int a = 0; a < 4; ++a) {
        const auto [basis_a, bit_a] = channel_to_basis_bit(static_cast<Channel>(a));
        for (int b = 0; b < 4; ++b) {
            const auto [basis_b, bit_b] = channel_to_basis_bit(static_cast<Channel>(b));
            const double p_eq = table.p_equal[basis_a == Basis::x][basis_b == Basis::x];
            const double p_bits = (bit_a == bit_b) ? p_eq / 2.0 : (1.0 - p_eq) / 2.0;
            const double p_cell = 0.25 * p_bits; // basis choices are uniform
            const double true_rate = src.pair_rate * p_cell *
                                     alice_link.end_to_end(static_cast<Channel>(a)) *
                                     bob_link.end_to_end(static_cast<Channel>(b)) *
                                     r.window_capture;
            const double acc_rate = rate_a[a] * rate_b[b] * tau;
            r.cell_rates[b][a] = true_rate + acc_rate;
            r.true_coincidences += true_rate;
            r.accidentals += acc_rate;
            if (basis_a == basis_b) {
                same_basis += true_rate + acc_rate;
                // sifted bit error: identical raw bits on a singlet
                const bool error = (bit_a == bit_b);
                if (basis_a == Basis::z) {
                    z_total += true_rate + acc_rate;
                    if (error) errors_z += true_rate + acc_rate;
                } else {
                    x_total += true_rate + acc_rate;
                    if (error) errors_x += true_rate + acc_rate;
                }
            }
        }
    }

    r.raw_rate = r.true_coincidences + r.accidentals;
    r.sifted_rate = same_basis;
    r.qber_z = z_total > 0.0 ? errors_z / z_total : 0.0;
    r.qber_x = x_total > 0.0 ? errors_x / x_total : 0.0;
    r.qber_total = same_basis > 0.0 ? (errors_z + errors_x) / same_basis : 0.0;
    return r;
}

} // namespace qkd
