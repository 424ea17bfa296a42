#pragma once

// Clock-offset recovery, coincidence matching, detector click policies and
// basis sifting.
//
// Offset recovery is a coarse-to-fine histogram search: a coarse histogram of
// pairwise time differences is computed as an FFT cross-correlation of binned
// streams, then the peak is re-histogrammed at successively finer bins (/16
// per level) down to single-tick resolution. A final least-squares stage fits
// residual clock drift over the epoch so the returned offset is valid at a
// caller-chosen reference tick. Cost scales with the spanned duration; feed
// it one epoch at a time.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/rng.hpp"
#include "qkd/ticks.hpp"

namespace qkd {

struct OffsetEstimate {
    std::int64_t offset = 0;            // bob_time - alice_time at the reference tick
    double drift = 0.0;                 // residual ticks-per-tick slope over the epoch
    std::uint64_t histogram_peak_height = 0;
    double confidence = 0.0;            // peak / (1 + mean non-peak bin)
};

struct OffsetSearch {
    std::int64_t range = 640'000'000;   // +-100 ms
    std::int64_t coarse_bin = 6400;     // 1 us
    int refine_factor = 16;
    double confidence_threshold = 5.0;
    bool fit_drift = true;
    Tick reference = 0;                 // tick the offset is reported at (epoch start)
    double resync_period = 6.4e9;       // fold period for the drift fit (1PPS)
};

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / double(len);
        const std::complex<double> step(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= step;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= double(n);
}

// Histogram of (bob - alice - center) over all pairs with the difference in
// [-half_span, +half_span], binned at bin_width. Two-pointer sweep, so cost is
// linear in the streams plus the number of in-range pairs.
inline std::vector<std::uint64_t> difference_histogram(std::span<const DetectionEvent> alice,
                                                       std::span<const DetectionEvent> bob,
                                                       std::int64_t center, std::int64_t half_span,
                                                       std::int64_t bin_width) {
    const std::size_t n_bins = static_cast<std::size_t>(2 * half_span / bin_width) + 1;
    std::vector<std::uint64_t> hist(n_bins, 0);
    std::size_t lo = 0;
    for (const auto& a : alice) {
        const std::int64_t at = static_cast<std::int64_t>(a.time);
        while (lo < bob.size() &&
               static_cast<std::int64_t>(bob[lo].time) - at < center - half_span)
            ++lo;
        for (std::size_t j = lo; j < bob.size(); ++j) {
            const std::int64_t d = static_cast<std::int64_t>(bob[j].time) - at - center;
            if (d > half_span) break;
            hist[static_cast<std::size_t>((d + half_span) / bin_width)]++;
        }
    }
    return hist;
}

// Collects every (alice_time, bob-alice difference) pair with the difference
// within +-half_span of center. Used by the drift-fit stage.
inline std::vector<std::pair<double, double>> difference_samples(
    std::span<const DetectionEvent> alice, std::span<const DetectionEvent> bob,
    std::int64_t center, std::int64_t half_span) {
    std::vector<std::pair<double, double>> out;
    std::size_t lo = 0;
    for (const auto& a : alice) {
        const std::int64_t at = static_cast<std::int64_t>(a.time);
        while (lo < bob.size() &&
               static_cast<std::int64_t>(bob[lo].time) - at < center - half_span)
            ++lo;
        for (std::size_t j = lo; j < bob.size(); ++j) {
            const std::int64_t d = static_cast<std::int64_t>(bob[j].time) - at;
            if (d - center > half_span) break;
            out.emplace_back(static_cast<double>(a.time), static_cast<double>(d));
        }
    }
    return out;
}

struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
};

inline LineFit fit_line(const std::vector<std::pair<double, double>>& xy) {
    const double n = static_cast<double>(xy.size());
    double sx = 0, sy = 0;
    for (const auto& [x, y] : xy) {
        sx += x;
        sy += y;
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : xy) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    LineFit f;
    f.slope = sxx > 1e-9 ? sxy / sxx : 0.0;
    f.intercept = my - f.slope * mx;
    return f;
}

}  // namespace detail

// Hierarchical cross-correlation search for the Bob-minus-Alice clock offset.
// Throws LockFailure when no significant histogram peak exists (confidence at
// or below the threshold) or when a stream is empty.
inline OffsetEstimate recover_offset(std::span<const DetectionEvent> alice,
                                     std::span<const DetectionEvent> bob,
                                     const OffsetSearch& search) {
    if (alice.empty() || bob.empty()) throw LockFailure("offset recovery: empty event stream");
    if (search.range <= 0 || search.coarse_bin <= 0 || search.refine_factor < 2)
        throw ConfigError("offset recovery: bad search parameters");

    // Coarse level: binned streams cross-correlated via FFT. Circular wrap is
    // avoided by padding to cover the examined lags.
    const Tick t0 = std::min(alice.front().time, bob.front().time);
    const Tick t1 = std::max(alice.back().time, bob.back().time);
    const std::size_t coarse_bins =
        static_cast<std::size_t>((t1 - t0) / static_cast<Tick>(search.coarse_bin)) + 1;
    const std::size_t lag_bins =
        static_cast<std::size_t>(search.range / search.coarse_bin) + 1;
    const std::size_t n = detail::next_pow2(coarse_bins + lag_bins + 1);

    std::vector<std::complex<double>> fa(n), fb(n);
    for (const auto& e : alice)
        fa[static_cast<std::size_t>((e.time - t0) / static_cast<Tick>(search.coarse_bin))] += 1.0;
    for (const auto& e : bob)
        fb[static_cast<std::size_t>((e.time - t0) / static_cast<Tick>(search.coarse_bin))] += 1.0;
    detail::fft_radix2(fa, false);
    detail::fft_radix2(fb, false);
    for (std::size_t i = 0; i < n; ++i) fa[i] = std::conj(fa[i]) * fb[i];
    detail::fft_radix2(fa, true);

    std::int64_t best_lag = 0;
    double best_val = -1.0;
    for (std::int64_t lag = -static_cast<std::int64_t>(lag_bins - 1);
         lag < static_cast<std::int64_t>(lag_bins); ++lag) {
        const std::size_t idx = lag >= 0 ? static_cast<std::size_t>(lag)
                                         : n - static_cast<std::size_t>(-lag);
        const double v = fa[idx].real();
        if (v > best_val) {
            best_val = v;
            best_lag = lag;
        }
    }
    std::int64_t center = best_lag * search.coarse_bin + search.coarse_bin / 2;

    // Refinement levels down to single-tick bins. Confidence is judged at the
    // level before the last: genuine peaks concentrate there while background
    // stays flat, and single-tick bins are too noisy for a stable ratio.
    std::vector<std::int64_t> widths;
    for (std::int64_t w = search.coarse_bin / search.refine_factor;; w /= search.refine_factor) {
        if (w <= 1) {
            widths.push_back(1);
            break;
        }
        widths.push_back(w);
    }
    OffsetEstimate est;
    std::int64_t prev_width = search.coarse_bin;
    for (std::size_t level = 0; level < widths.size(); ++level) {
        const std::int64_t w = widths[level];
        const std::int64_t half_span = 2 * prev_width;
        auto hist = detail::difference_histogram(alice, bob, center, half_span, w);
        const auto peak_it = std::max_element(hist.begin(), hist.end());
        const std::size_t peak = static_cast<std::size_t>(peak_it - hist.begin());
        const bool confidence_level = level + 2 == widths.size() || widths.size() == 1;
        if (confidence_level) {
            double rest = 0.0;
            for (std::size_t i = 0; i < hist.size(); ++i)
                if (i != peak) rest += static_cast<double>(hist[i]);
            const double mean_rest = rest / static_cast<double>(hist.size() - 1);
            est.histogram_peak_height = *peak_it;
            est.confidence = static_cast<double>(*peak_it) / (1.0 + mean_rest);
        }
        center += static_cast<std::int64_t>(peak) * w - half_span + w / 2;
        prev_width = w;
    }
    if (!(est.confidence > search.confidence_threshold))
        throw LockFailure("offset recovery: no significant coincidence peak");

    // Final stage: least-squares fit of the pairwise differences against the
    // alice time folded at the resync period, so a linear drift between clock
    // resyncs does not smear the answer. One outlier-trim pass drops
    // accidentals. The offset is the fit evaluated at the reference tick.
    auto samples = detail::difference_samples(alice, bob, center, 96);
    if (search.fit_drift && samples.size() >= 50) {
        const double period = search.resync_period;
        const double ref = static_cast<double>(search.reference);
        for (auto& [x, y] : samples) x = std::fmod(x - ref, period);
        auto fit = detail::fit_line(samples);
        double rss = 0.0;
        for (const auto& [x, y] : samples) {
            const double r = y - fit.intercept - fit.slope * x;
            rss += r * r;
        }
        const double rms = std::max(std::sqrt(rss / static_cast<double>(samples.size())), 4.0);
        std::vector<std::pair<double, double>> kept;
        kept.reserve(samples.size());
        for (const auto& [x, y] : samples)
            if (std::abs(y - fit.intercept - fit.slope * x) <= 3.0 * rms) kept.emplace_back(x, y);
        if (kept.size() >= 50) fit = detail::fit_line(kept);
        est.offset = static_cast<std::int64_t>(std::llround(fit.intercept));
        est.drift = fit.slope;
    } else if (!samples.empty()) {
        double sum = 0.0;
        for (const auto& [x, y] : samples) sum += y;
        est.offset = static_cast<std::int64_t>(std::llround(sum / static_cast<double>(samples.size())));
        est.drift = 0.0;
    } else {
        est.offset = center;
        est.drift = 0.0;
    }
    return est;
}

inline OffsetEstimate recover_offset(std::span<const DetectionEvent> alice,
                                     std::span<const DetectionEvent> bob,
                                     std::int64_t search_range) {
    OffsetSearch search;
    search.range = search_range;
    return recover_offset(alice, bob, search);
}

// Shifts bob's recorded times onto alice's timeline using a recovered offset
// and drift. Events whose corrected time would precede tick zero are dropped;
// the result is re-sorted because a drift fold can reorder events near the
// resync boundary.
inline std::vector<DetectionEvent> apply_clock_correction(std::span<const DetectionEvent> bob,
                                                          const OffsetEstimate& est,
                                                          Tick reference,
                                                          double resync_period = 6.4e9) {
    std::vector<DetectionEvent> out;
    out.reserve(bob.size());
    for (const auto& e : bob) {
        const double shifted =
            static_cast<double>(e.time) - static_cast<double>(est.offset);
        double phase = std::fmod(shifted - static_cast<double>(reference), resync_period);
        if (phase < 0.0) phase += resync_period;
        const double corrected = shifted - est.drift * phase;
        if (corrected < 0.0) continue;
        out.push_back({static_cast<Tick>(std::llround(corrected)), e.channel});
    }
    std::sort(out.begin(), out.end(),
              [](const DetectionEvent& x, const DetectionEvent& y) { return x.time < y.time; });
    return out;
}

struct IndexedPair {
    std::size_t alice_index;
    std::size_t bob_index;
};

// Greedy earliest-match one-to-one pairing: walk alice in time order, match
// each event to the earliest unconsumed bob event with |difference - offset|
// <= window/2. Each event joins at most one pair.
inline std::vector<IndexedPair> match_coincidence_indices(std::span<const DetectionEvent> alice,
                                                          std::span<const DetectionEvent> bob,
                                                          std::int64_t offset, int window = 13) {
    if (window <= 0) throw ConfigError("coincidence window must be positive");
    const std::int64_t half = window / 2;
    std::vector<IndexedPair> out;
    std::size_t j = 0;
    for (std::size_t i = 0; i < alice.size() && j < bob.size(); ++i) {
        const std::int64_t at = static_cast<std::int64_t>(alice[i].time);
        while (j < bob.size() &&
               static_cast<std::int64_t>(bob[j].time) - at - offset < -half)
            ++j;
        if (j == bob.size()) break;
        if (static_cast<std::int64_t>(bob[j].time) - at - offset <= half) {
            out.push_back({i, j});
            ++j;
        }
    }
    return out;
}

inline std::vector<CoincidentPair> find_coincidences(std::span<const DetectionEvent> alice,
                                                     std::span<const DetectionEvent> bob,
                                                     std::int64_t offset, int window = 13) {
    std::vector<CoincidentPair> out;
    for (const auto& [i, j] : match_coincidence_indices(alice, bob, offset, window))
        out.push_back({alice[i].time, bob[j].time, alice[i].channel, bob[j].channel});
    return out;
}

enum class DoubleClickPolicy { randomize, first_wins, discard };

inline const char* double_click_policy_name(DoubleClickPolicy p) {
    switch (p) {
        case DoubleClickPolicy::randomize: return "randomize";
        case DoubleClickPolicy::first_wins: return "first_wins";
        case DoubleClickPolicy::discard: return "discard";
    }
    return "?";
}

// Collapses double-click clusters (events within double_click_window of the
// cluster head) to a single event per the policy, then discards any event
// falling within dead_time of the previous surviving event. Pass dead_time 0
// to disable the rejection pass.
inline std::vector<DetectionEvent> apply_click_policies(std::span<const DetectionEvent> events,
                                                        Tick dead_time, Tick double_click_window,
                                                        DoubleClickPolicy policy, Rng& rng) {
    std::vector<DetectionEvent> collapsed;
    collapsed.reserve(events.size());
    std::size_t i = 0;
    while (i < events.size()) {
        std::size_t j = i + 1;
        while (j < events.size() && events[j].time - events[i].time <= double_click_window) ++j;
        const std::size_t cluster = j - i;
        if (cluster == 1) {
            collapsed.push_back(events[i]);
        } else {
            switch (policy) {
                case DoubleClickPolicy::randomize:
                    collapsed.push_back(
                        {events[i].time, events[i + rng.below(cluster)].channel});
                    break;
                case DoubleClickPolicy::first_wins:
                    collapsed.push_back(events[i]);
                    break;
                case DoubleClickPolicy::discard:
                    break;
            }
        }
        i = j;
    }
    if (dead_time == 0) return collapsed;
    std::vector<DetectionEvent> out;
    out.reserve(collapsed.size());
    for (const auto& e : collapsed) {
        if (!out.empty() && e.time - out.back().time < dead_time) continue;
        out.push_back(e);
    }
    return out;
}

struct SiftResult {
    std::vector<CoincidentPair> raw_pairs;
    KeyBuffer sifted_bits_alice;
    KeyBuffer sifted_bits_bob;
    CoincidenceMatrix matrix;
};

// Keeps same-basis pairs. Alice's bit is her channel's bit; Bob's is the
// complement of his (the source emits anticorrelated pairs and Alice's raw
// key is taken as the reference). The matrix counts every pair, matched
// bases or not.
inline SiftResult sift(std::vector<CoincidentPair> pairs) {
    SiftResult r;
    r.sifted_bits_alice.stage = KeyStage::sifted;
    r.sifted_bits_bob.stage = KeyStage::sifted;
    for (const auto& p : pairs) {
        r.matrix.at(p.bob_channel, p.alice_channel)++;
        const auto a = channel_to_basis_bit(p.alice_channel);
        const auto b = channel_to_basis_bit(p.bob_channel);
        if (a.basis != b.basis) continue;
        r.sifted_bits_alice.bits.push_back(a.bit);
        r.sifted_bits_bob.bits.push_back(b.bit ^ 1);
    }
    r.raw_pairs = std::move(pairs);
    return r;
}

}  // namespace qkd
