#pragma once

// Two-node session: the lockstep epoch state machine both parties run over
// the classical channel. Per epoch:
//
//   CLOCK_SYNC (both) -> TIMETAG_BATCH (lower-rate side, decided at epoch 0)
//   -> COINC_INDICES + BASIS_REVEAL (matcher) -> optional ERE_SAMPLE pair
//   -> SHUFFLE_SEED (alice) -> PARITY_REQUEST/REPLY rounds (bob drives)
//   -> PA_PARAMS (bob) -> HASH_VERIFY (bob, then alice) -> EPOCH_RESULT
//   (matcher).
//
// A verification mismatch or lock failure aborts only its epoch: the side
// that detects it sends ABORT for that epoch id, both record an aborted
// epoch and continue. Stale frames from an aborted exchange are dropped on
// receive, which also resynchronizes the wire. Framing and transport errors
// are fatal; completed epochs keep their keys.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qkd/analysis.hpp"
#include "qkd/cascade.hpp"
#include "qkd/coincidence.hpp"
#include "qkd/config.hpp"
#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/netlink.hpp"
#include "qkd/photon_sim.hpp"
#include "qkd/privacy.hpp"
#include "qkd/rng.hpp"

namespace qkd {

struct SessionHooks {
    std::uint32_t inject_abort_epoch = 0xffffffffu;  // operator abort, for tests
    std::function<void(const EpochStats&)> on_epoch;
    std::function<void(const KeyBuffer&)> on_secure_key;
};

struct SessionOutcome {
    std::vector<EpochStats> epochs;
    std::vector<KeyBuffer> secure_keys;
    CommLedger ledger;
    std::uint64_t session_seed = 0;
};

namespace detail {

inline constexpr std::uint64_t tag_epoch = 0x65706f63;    // "epoc"
inline constexpr std::uint64_t tag_ere = 0x657265;        // "ere"
inline constexpr std::uint64_t tag_shuffle = 0x736866;    // "shf"
inline constexpr std::uint64_t tag_pa = 0x7061;           // "pa"
inline constexpr std::uint64_t tag_verify = 0x766679;     // "vfy"
inline constexpr std::uint64_t tag_clicks = 0x636c6b;     // "clk"
inline constexpr std::uint64_t tag_nonce_alice = 0xa11ce;
inline constexpr std::uint64_t tag_nonce_bob = 0xb0b;

}  // namespace detail

// Framed-message endpoint with the epoch discipline: receives drop stale
// frames, surface ABORTs as EpochAbort, and flag anything else unexpected as
// a protocol violation (announced to the peer first).
class FrameChannel {
  public:
    FrameChannel(ByteStream& stream, CommLedger& ledger) : stream_(&stream), ledger_(&ledger) {}

    void send(MsgType type, std::uint32_t epoch, std::vector<std::uint8_t> payload = {}) {
        Frame f;
        f.type = type;
        f.epoch_id = epoch;
        f.payload = std::move(payload);
        write_frame(*stream_, f, ledger_);
    }

    void send_abort(std::uint32_t epoch, std::uint8_t reason) {
        AbortMsg m;
        m.reason = reason;
        send(MsgType::abort, epoch, m.encode());
    }

    // Next frame belonging to the given epoch.
    Frame next(std::uint32_t epoch) {
        for (;;) {
            Frame f;
            if (pending_) {
                f = std::move(*pending_);
                pending_.reset();
            } else {
                f = read_frame(*stream_, ledger_);
            }
            if (f.epoch_id < epoch) continue;  // leftover of an aborted epoch
            if (f.type == MsgType::abort) {
                const auto msg = AbortMsg::decode(f.payload);
                if (f.epoch_id == epoch)
                    throw EpochAbort(epoch, msg.reason, "peer aborted epoch");
                throw ProtocolError("abort received for a future epoch");
            }
            if (f.epoch_id != epoch) return violation(epoch, "frame from a future epoch");
            return f;
        }
    }

    Frame recv_expect(MsgType expected, std::uint32_t epoch) {
        Frame f = next(epoch);
        if (f.type != expected)
            return violation(epoch, std::string("expected ") + msg_type_name(expected) + ", got " +
                                        msg_type_name(f.type));
        return f;
    }

    void push_back_frame(Frame f) { pending_ = std::move(f); }

    [[noreturn]] Frame violation(std::uint32_t epoch, const std::string& what) {
        send_abort(epoch, abort_reason::protocol);
        throw EpochAbort(epoch, abort_reason::protocol, "protocol violation: " + what);
    }

  private:
    ByteStream* stream_;
    CommLedger* ledger_;
    std::optional<Frame> pending_;
};

// Bob's view of Alice's key during cascade: every parity is fetched over the
// channel, one round trip per call.
class NetParityOracle final : public ParityOracle {
  public:
    NetParityOracle(FrameChannel& ch, std::uint32_t epoch, std::size_t key_len, bool compat)
        : ch_(&ch), epoch_(epoch), key_len_(key_len), compat_(compat) {}

    std::vector<std::uint8_t> block_parities(int pass, std::uint32_t block_size) override {
        if (block_size == 0) throw ProtocolError("zero block size");
        ParityRequestMsg req;
        req.kind = 0;
        req.pass = static_cast<std::uint32_t>(pass);
        req.block_size = block_size;
        ch_->send(MsgType::parity_request, epoch_, req.encode());
        const Frame f = ch_->recv_expect(MsgType::parity_reply, epoch_);
        const std::size_t blocks = (key_len_ + block_size - 1) / block_size;
        return decode_parities(f.payload, blocks, compat_);
    }

    std::vector<std::uint8_t> range_parities(std::span<const ParityRange> ranges) override {
        ParityRequestMsg req;
        req.kind = 1;
        req.ranges.assign(ranges.begin(), ranges.end());
        ch_->send(MsgType::parity_request, epoch_, req.encode());
        const Frame f = ch_->recv_expect(MsgType::parity_reply, epoch_);
        return decode_parities(f.payload, ranges.size(), compat_);
    }

  private:
    FrameChannel* ch_;
    std::uint32_t epoch_;
    std::size_t key_len_;
    bool compat_;
};

// Alice's side of the parity rounds: answer requests until the first
// non-parity frame, which is pushed back for the caller.
inline std::pair<std::uint64_t, std::uint64_t> serve_parities(FrameChannel& ch,
                                                              std::uint32_t epoch,
                                                              LocalParityOracle& oracle,
                                                              bool compat) {
    std::uint64_t revealed = 0;
    std::uint64_t messages = 0;
    for (;;) {
        Frame f = ch.next(epoch);
        if (f.type != MsgType::parity_request) {
            ch.push_back_frame(std::move(f));
            return {revealed, messages};
        }
        const auto req = ParityRequestMsg::decode(f.payload);
        std::vector<std::uint8_t> parities;
        if (req.kind == 0) {
            parities = oracle.block_parities(static_cast<int>(req.pass), req.block_size);
        } else {
            parities = oracle.range_parities(req.ranges);
        }
        revealed += parities.size();
        messages += 1;
        ch.send(MsgType::parity_reply, epoch, encode_parities(parities, compat));
    }
}

namespace detail {

inline std::span<const DetectionEvent> slice_events(const std::vector<DetectionEvent>& events,
                                                    std::int64_t lo, std::int64_t hi) {
    const auto cmp = [](const DetectionEvent& e, Tick t) { return e.time < t; };
    const Tick lo_t = lo > 0 ? static_cast<Tick>(lo) : 0;
    const Tick hi_t = hi > 0 ? static_cast<Tick>(hi) : 0;
    const auto begin = std::lower_bound(events.begin(), events.end(), lo_t, cmp);
    const auto end = std::lower_bound(begin, events.end(), hi_t, cmp);
    return {begin, end};
}

struct MatchOutput {
    std::vector<CoincidentPair> pairs;
    std::vector<std::uint32_t> batch_indices;
    std::vector<std::uint8_t> my_basis_bits;
    OffsetEstimate estimate;
};

}  // namespace detail

inline SessionOutcome run_session(const SessionConfig& cfg, Role role,
                                  const std::vector<DetectionEvent>& raw_events,
                                  ByteStream& stream, const SessionHooks& hooks = {}) {
    cfg.validate();
    for (std::size_t i = 1; i < raw_events.size(); ++i)
        if (raw_events[i].time < raw_events[i - 1].time)
            throw ConfigError("session events must be time-ordered");

    // Local detector policies run before anything touches the wire.
    Rng click_rng(mix_seed(cfg.seed,
                           role == Role::alice ? detail::tag_nonce_alice : detail::tag_nonce_bob,
                           detail::tag_clicks));
    const std::vector<DetectionEvent> events = apply_click_policies(
        raw_events, cfg.dead_time_rejection ? cfg.dead_time : 0, cfg.double_click_window,
        cfg.double_click_policy, click_rng);

    SessionOutcome out;
    FrameChannel ch(stream, out.ledger);
    const bool i_am_alice = role == Role::alice;
    const Tick epoch_ticks = static_cast<Tick>(cfg.epoch_seconds) * ticks_per_second;
    const auto epoch_count =
        static_cast<std::uint32_t>(cfg.duration_seconds / cfg.epoch_seconds);

    HelloMsg mine;
    mine.role = i_am_alice ? 0 : 1;
    mine.nonce = mix_seed(cfg.seed, i_am_alice ? detail::tag_nonce_alice : detail::tag_nonce_bob);
    mine.epoch_count = epoch_count;
    mine.epoch_seconds = cfg.epoch_seconds;
    mine.verify_rounds = cfg.verify_rounds;
    mine.n_safety = cfg.n_safety;
    mine.estimate_mode = static_cast<std::uint8_t>(cfg.cascade.estimate_mode);
    mine.backtrack = static_cast<std::uint8_t>(cfg.cascade.backtrack);
    mine.shuffle_before = cfg.cascade.shuffle_before ? 1 : 0;
    mine.parity_compat = cfg.parity_compat ? 1 : 0;
    mine.window = static_cast<std::uint32_t>(cfg.window);
    ch.send(MsgType::hello, 0, mine.encode());

    HelloMsg theirs;
    try {
        theirs = HelloMsg::decode(ch.recv_expect(MsgType::hello, 0).payload);
    } catch (const EpochAbort& a) {
        throw ProtocolError(std::string("handshake failed: ") + a.what());
    }
    const auto refuse = [&](const std::string& why) {
        ch.send_abort(0, abort_reason::protocol);
        throw ProtocolError("handshake mismatch: " + why);
    };
    if (theirs.version != mine.version) refuse("protocol version");
    if (theirs.role == mine.role) refuse("both sides configured with the same role");
    if (theirs.epoch_count != mine.epoch_count) refuse("epoch count");
    if (theirs.epoch_seconds != mine.epoch_seconds) refuse("epoch length");
    if (theirs.verify_rounds != mine.verify_rounds) refuse("verify rounds");
    if (theirs.n_safety != mine.n_safety) refuse("safety margin");
    if (theirs.estimate_mode != mine.estimate_mode) refuse("estimate mode");
    if (theirs.backtrack != mine.backtrack) refuse("backtrack mode");
    if (theirs.shuffle_before != mine.shuffle_before) refuse("shuffle setting");
    if (theirs.parity_compat != mine.parity_compat) refuse("parity encoding");
    if (theirs.window != mine.window) refuse("coincidence window");
    out.session_seed =
        i_am_alice ? mix_seed(mine.nonce, theirs.nonce) : mix_seed(theirs.nonce, mine.nonce);

    bool sender_decided = false;
    bool sender_is_alice = true;
    bool have_lock = false;
    std::int64_t prev_offset = 0;
    bool have_history = false;
    EstimateState est_state;

    for (std::uint32_t k = 0; k < epoch_count; ++k) {
        EpochStats stats;
        stats.epoch_id = k;
        stats.start_seconds = static_cast<double>(k) * cfg.epoch_seconds;
        stats.duration_seconds = cfg.epoch_seconds;
        const CommLedger ledger_before = out.ledger;

        try {
            if (hooks.inject_abort_epoch == k) {
                ch.send_abort(k, abort_reason::operator_request);
                throw EpochAbort(k, abort_reason::operator_request, "operator abort");
            }

            const Tick my_start = static_cast<Tick>(k) * epoch_ticks;
            const auto my_slice = detail::slice_events(events, static_cast<std::int64_t>(my_start),
                                                       static_cast<std::int64_t>(my_start) +
                                                           static_cast<std::int64_t>(epoch_ticks));
            ClockSyncMsg my_sync;
            my_sync.epoch_start_tick = my_start;
            my_sync.event_count = my_slice.size();
            ch.send(MsgType::clock_sync, k, my_sync.encode());
            const auto peer_sync =
                ClockSyncMsg::decode(ch.recv_expect(MsgType::clock_sync, k).payload);

            if (!sender_decided) {
                const std::uint64_t alice_count = i_am_alice ? my_sync.event_count : peer_sync.event_count;
                const std::uint64_t bob_count = i_am_alice ? peer_sync.event_count : my_sync.event_count;
                sender_is_alice = alice_count <= bob_count;
                sender_decided = true;
            }
            const bool i_send = sender_is_alice == i_am_alice;

            // Timetag transfer: the lower-rate side ships its epoch slice.
            std::vector<DetectionEvent> batch;
            if (i_send) {
                batch.assign(my_slice.begin(), my_slice.end());
                for (auto& frame : encode_timetag_batch(batch, k))
                    write_frame(stream, frame, &out.ledger);
            } else {
                for (;;) {
                    const Frame f = ch.recv_expect(MsgType::timetag_batch, k);
                    auto [part, final_frame] = decode_timetag_batch_frame(f);
                    if (!batch.empty() && !part.empty() && part.front().time < batch.back().time)
                        ch.violation(k, "batch continuation out of order");
                    batch.insert(batch.end(), part.begin(), part.end());
                    if (final_frame) break;
                }
            }

            // Matching (matcher side), index + basis reveal exchange.
            std::vector<std::uint32_t> pair_batch_indices;
            std::vector<std::uint8_t> peer_basis_bits;   // sender's view of matcher bases
            std::vector<CoincidentPair> pairs;           // matcher only
            std::vector<Channel> my_channels;            // my channel per matched pair
            std::vector<std::uint8_t> my_basis_bits;
            if (!i_send) {
                const auto sender_start = static_cast<std::int64_t>(peer_sync.epoch_start_tick);
                const std::int64_t range = have_lock ? cfg.track_range : cfg.search_range;
                const std::int64_t center =
                    have_lock ? (i_am_alice ? -prev_offset : prev_offset) : 0;
                const auto local = detail::slice_events(
                    events, sender_start + center - range,
                    sender_start + static_cast<std::int64_t>(epoch_ticks) + center + range);

                std::span<const DetectionEvent> alice_stream =
                    i_am_alice ? local : std::span<const DetectionEvent>(batch);
                std::span<const DetectionEvent> bob_stream =
                    i_am_alice ? std::span<const DetectionEvent>(batch) : local;
                const Tick reference = i_am_alice ? my_start : peer_sync.epoch_start_tick;

                OffsetEstimate est;
                try {
                    OffsetSearch search;
                    search.range = have_lock ? cfg.track_range : cfg.search_range;
                    search.confidence_threshold = cfg.confidence_threshold;
                    search.reference = reference;
                    search.resync_period = static_cast<double>(cfg.clock.resync_period);
                    if (have_lock) {
                        std::vector<DetectionEvent> shifted;
                        shifted.reserve(bob_stream.size());
                        for (const auto& e : bob_stream) {
                            const std::int64_t t = static_cast<std::int64_t>(e.time) - prev_offset;
                            if (t >= 0) shifted.push_back({static_cast<Tick>(t), e.channel});
                        }
                        est = recover_offset(alice_stream, shifted, search);
                        est.offset += prev_offset;
                    } else {
                        est = recover_offset(alice_stream, bob_stream, search);
                    }
                } catch (const LockFailure& lf) {
                    ch.send_abort(k, abort_reason::lock_failure);
                    throw EpochAbort(k, abort_reason::lock_failure, lf.what());
                }

                // Correct the bob-side stream onto the alice timeline,
                // keeping the mapping back to original positions.
                std::vector<DetectionEvent> corrected;
                std::vector<std::uint32_t> corrected_from;
                corrected.reserve(bob_stream.size());
                const double period = static_cast<double>(cfg.clock.resync_period);
                for (std::size_t i = 0; i < bob_stream.size(); ++i) {
                    const std::int64_t shifted =
                        static_cast<std::int64_t>(bob_stream[i].time) - est.offset;
                    double phase = std::fmod(static_cast<double>(shifted) -
                                                 static_cast<double>(reference), period);
                    if (phase < 0) phase += period;
                    const double t = static_cast<double>(shifted) - est.drift * phase;
                    if (t < 0) continue;
                    corrected.push_back({static_cast<Tick>(std::llround(t)), bob_stream[i].channel});
                    corrected_from.push_back(static_cast<std::uint32_t>(i));
                }
                const auto matched = match_coincidence_indices(alice_stream, corrected, 0,
                                                               static_cast<int>(cfg.window));

                pairs.reserve(matched.size());
                pair_batch_indices.reserve(matched.size());
                my_basis_bits.reserve(matched.size());
                for (const auto& m : matched) {
                    const auto& a_ev = alice_stream[m.alice_index];
                    const auto& b_ev = bob_stream[corrected_from[m.bob_index]];
                    pairs.push_back({a_ev.time, b_ev.time, a_ev.channel, b_ev.channel});
                    pair_batch_indices.push_back(
                        i_am_alice ? corrected_from[m.bob_index]
                                   : static_cast<std::uint32_t>(m.alice_index));
                    const auto mine_ev = i_am_alice ? a_ev : b_ev;
                    my_channels.push_back(mine_ev.channel);
                    my_basis_bits.push_back(
                        channel_to_basis_bit(mine_ev.channel).basis == Basis::x ? 1 : 0);
                }
                CoincIndicesMsg idx;
                idx.indices = pair_batch_indices;
                ch.send(MsgType::coinc_indices, k, idx.encode());
                BasisRevealMsg reveal;
                reveal.basis_bits = my_basis_bits;
                ch.send(MsgType::basis_reveal, k, reveal.encode());

                stats.clock_offset = est.offset;
                stats.clock_drift = est.drift;
                have_lock = true;
                prev_offset = est.offset;
            } else {
                const auto idx =
                    CoincIndicesMsg::decode(ch.recv_expect(MsgType::coinc_indices, k).payload);
                const auto reveal =
                    BasisRevealMsg::decode(ch.recv_expect(MsgType::basis_reveal, k).payload);
                if (idx.indices.size() != reveal.basis_bits.size())
                    ch.violation(k, "basis reveal length mismatch");
                if (!idx.indices.empty() && idx.indices.back() >= batch.size())
                    ch.violation(k, "coincidence index beyond batch");
                peer_basis_bits = reveal.basis_bits;
                my_channels.reserve(idx.indices.size());
                for (const auto i : idx.indices) my_channels.push_back(batch[i].channel);
            }

            const std::size_t n_raw = my_channels.size();
            stats.raw_bits = n_raw;

            // Sifted keys, in matched-pair order on both sides. Alice keeps
            // her bit; bob stores the complement.
            KeyBuffer sifted;
            sifted.stage = KeyStage::sifted;
            sifted.epoch_id = k;
            std::uint64_t alice_zero_bits = 0;
            for (std::size_t i = 0; i < n_raw; ++i) {
                const auto bb = channel_to_basis_bit(my_channels[i]);
                if (i_am_alice && bb.bit == 0) ++alice_zero_bits;
                const bool peer_x = i_send ? peer_basis_bits[i] != 0
                                           : (channel_to_basis_bit(
                                                  i_am_alice ? pairs[i].bob_channel
                                                             : pairs[i].alice_channel)
                                                  .basis == Basis::x);
                const bool mine_x = bb.basis == Basis::x;
                if (mine_x != peer_x) continue;
                sifted.bits.push_back(i_am_alice ? bb.bit : bb.bit ^ 1u);
            }
            if (!i_send) {
                for (const auto& p : pairs) stats.matrix.at(p.bob_channel, p.alice_channel) += 1;
                stats.derive_from_matrix();
            }
            stats.sifted_bits = sifted.bits.size();
            const double p0_alice =
                n_raw > 0 ? static_cast<double>(alice_zero_bits) / static_cast<double>(n_raw) : 0.5;

            // Error-rate estimate: sacrificial sample, or cascade history.
            const std::uint64_t epoch_seed = mix_seed(out.session_seed, k, detail::tag_epoch);
            const bool do_ere =
                cfg.cascade.estimate_mode == EstimateMode::sample_10pct || !have_history;
            double q_hat = 0.0;
            if (do_ere && sifted.bits.size() >= 10) {
                const std::size_t m = sifted.bits.size() / 10;
                Rng ere_rng(mix_seed(epoch_seed, 0, detail::tag_ere));
                const auto sample = detail::sample_indices(sifted.bits.size(), m, ere_rng);
                std::vector<std::uint8_t> my_sample(m);
                for (std::size_t i = 0; i < m; ++i) my_sample[i] = sifted.bits[sample[i]];
                std::uint32_t mismatches = 0;
                if (i_am_alice) {
                    EreSampleMsg msg;
                    msg.kind = 0;
                    msg.sample_bits = my_sample;
                    ch.send(MsgType::ere_sample, k, msg.encode());
                    const auto reply =
                        EreSampleMsg::decode(ch.recv_expect(MsgType::ere_sample, k).payload);
                    if (reply.kind != 1 || reply.sample_size != m)
                        ch.violation(k, "estimate reply mismatch");
                    mismatches = reply.mismatches;
                } else {
                    const auto values =
                        EreSampleMsg::decode(ch.recv_expect(MsgType::ere_sample, k).payload);
                    if (values.kind != 0 || values.sample_bits.size() != m)
                        ch.violation(k, "estimate sample mismatch");
                    for (std::size_t i = 0; i < m; ++i)
                        if (values.sample_bits[i] != my_sample[i]) ++mismatches;
                    EreSampleMsg msg;
                    msg.kind = 1;
                    msg.mismatches = mismatches;
                    msg.sample_size = static_cast<std::uint32_t>(m);
                    ch.send(MsgType::ere_sample, k, msg.encode());
                }
                q_hat = static_cast<double>(mismatches) / static_cast<double>(m);
                std::vector<std::uint8_t> kept;
                kept.reserve(sifted.bits.size() - m);
                std::size_t cursor = 0;
                for (std::size_t i = 0; i < sifted.bits.size(); ++i) {
                    if (cursor < sample.size() && sample[cursor] == i) {
                        ++cursor;
                        continue;
                    }
                    kept.push_back(sifted.bits[i]);
                }
                sifted.bits = std::move(kept);
            } else if (!do_ere) {
                q_hat = cfg.cascade.estimate_mode == EstimateMode::previous_block
                            ? est_state.previous()
                            : est_state.running_average();
            }
            stats.qber_estimate = q_hat;
            stats.corrected_bits = sifted.bits.size();

            // Shuffle seed and the reference key's bit bias travel together.
            const std::uint64_t shuffle_seed = mix_seed(epoch_seed, 0, detail::tag_shuffle);
            double p0 = 0.5;
            if (i_am_alice) {
                ShuffleSeedMsg msg;
                msg.seed = shuffle_seed;
                msg.p0 = p0_alice;
                ch.send(MsgType::shuffle_seed, k, msg.encode());
                p0 = p0_alice;
            } else {
                const auto msg =
                    ShuffleSeedMsg::decode(ch.recv_expect(MsgType::shuffle_seed, k).payload);
                if (msg.seed != shuffle_seed) ch.violation(k, "shuffle seed mismatch");
                if (!(msg.p0 >= 0.0 && msg.p0 <= 1.0)) ch.violation(k, "bias out of range");
                p0 = msg.p0;
            }

            // Cascade: bob drives, alice serves parities.
            CascadeConfig ccfg = cfg.cascade;
            ccfg.shuffle_seed = shuffle_seed;
            ccfg.qber_estimate = q_hat;
            KeyBuffer corrected = sifted;
            corrected.stage = KeyStage::corrected;
            std::uint64_t leaked = 0;
            std::uint64_t parity_messages = 0;
            double measured = 0.0;
            if (i_am_alice) {
                LocalParityOracle oracle(corrected.bits, ccfg);
                const auto [revealed, messages] =
                    serve_parities(ch, k, oracle, cfg.parity_compat);
                leaked = revealed;
                parity_messages = messages;
            } else if (!corrected.bits.empty()) {
                NetParityOracle oracle(ch, k, corrected.bits.size(), cfg.parity_compat);
                auto outcome = detail::run_cascade(corrected.bits, ccfg, oracle);
                corrected.bits = std::move(outcome.bits);
                leaked = outcome.leaked;
                parity_messages = outcome.messages;
                measured = corrected.bits.empty()
                               ? 0.0
                               : static_cast<double>(outcome.corrections) /
                                     static_cast<double>(corrected.bits.size());
            }
            stats.leaked_bits = leaked;
            stats.parity_messages = parity_messages;

            // Secure length and the PA parameters, proposed by bob and
            // recomputed by alice; any disagreement is a violation.
            const std::uint64_t pa_seed = mix_seed(epoch_seed, 0, detail::tag_pa);
            const auto compute_secure = [&](double qber_measured,
                                            std::uint64_t leak) -> std::uint64_t {
                if (corrected.bits.empty() || p0 <= 0.0 || p0 >= 1.0) return 0;
                SecureLengthInputs in;
                in.n_raw = corrected.bits.size();
                in.qber = std::clamp(qber_measured, 0.0, 0.5);
                in.n_leakage = leak + cfg.verify_rounds;
                in.n_safety = cfg.n_safety;
                in.p0 = p0;
                return secure_length(in);
            };
            std::uint64_t n_secure = 0;
            if (!i_am_alice) {
                n_secure = compute_secure(measured, leaked);
                PaParamsMsg msg;
                msg.n_secure = n_secure;
                msg.pa_seed = pa_seed;
                msg.leaked_bits = leaked;
                msg.qber_measured = std::clamp(measured, 0.0, 0.5);
                msg.p0_used = p0;
                ch.send(MsgType::pa_params, k, msg.encode());
            } else {
                const auto msg =
                    PaParamsMsg::decode(ch.recv_expect(MsgType::pa_params, k).payload);
                if (msg.pa_seed != pa_seed) ch.violation(k, "pa seed mismatch");
                if (msg.leaked_bits != leaked) ch.violation(k, "leakage accounting mismatch");
                if (msg.p0_used != p0) ch.violation(k, "bias mismatch");
                if (!(msg.qber_measured >= 0.0 && msg.qber_measured <= 0.5))
                    ch.violation(k, "measured error rate out of range");
                if (msg.n_secure != compute_secure(msg.qber_measured, leaked))
                    ch.violation(k, "secure length mismatch");
                n_secure = msg.n_secure;
                measured = msg.qber_measured;
            }

            // Verify the corrected keys, then amplify. The secure key is
            // committed only once the epoch summary round-trips.
            std::optional<KeyBuffer> pending_secure;
            if (n_secure > 0) {
                const std::uint64_t verify_seed = mix_seed(epoch_seed, 0, detail::tag_verify);
                const auto digest = verification_digest(
                    corrected, static_cast<int>(cfg.verify_rounds), verify_seed);
                if (!i_am_alice) {
                    HashVerifyMsg msg;
                    msg.rounds = cfg.verify_rounds;
                    msg.digest = digest;
                    ch.send(MsgType::hash_verify, k, msg.encode());
                    const auto echo =
                        HashVerifyMsg::decode(ch.recv_expect(MsgType::hash_verify, k).payload);
                    if (echo.rounds != cfg.verify_rounds || echo.digest != digest) {
                        ch.send_abort(k, abort_reason::verify_failed);
                        throw EpochAbort(k, abort_reason::verify_failed, "verification mismatch");
                    }
                } else {
                    const auto msg =
                        HashVerifyMsg::decode(ch.recv_expect(MsgType::hash_verify, k).payload);
                    if (msg.rounds != cfg.verify_rounds || msg.digest != digest) {
                        ch.send_abort(k, abort_reason::verify_failed);
                        throw EpochAbort(k, abort_reason::verify_failed, "verification mismatch");
                    }
                    HashVerifyMsg reply;
                    reply.rounds = cfg.verify_rounds;
                    reply.digest = digest;
                    ch.send(MsgType::hash_verify, k, reply.encode());
                }

                pending_secure = privacy_amplify(corrected, n_secure, pa_seed);
                pending_secure->epoch_id = k;
                stats.secure_bits = pending_secure->bits.size();
            }

            // Epoch summary flows from the matcher, who holds the matrix.
            if (!i_send) {
                EpochResultMsg msg;
                msg.raw_bits = stats.raw_bits;
                msg.sifted_bits = stats.sifted_bits;
                msg.corrected_bits = stats.corrected_bits;
                msg.secure_bits = stats.secure_bits;
                msg.qber_total = stats.qber_total;
                msg.qber_x = stats.qber_x;
                msg.qber_z = stats.qber_z;
                msg.visibility_z = stats.visibility_z;
                msg.visibility_x = stats.visibility_x;
                msg.clock_offset = stats.clock_offset;
                msg.clock_drift = stats.clock_drift;
                for (int b = 0; b < 4; ++b)
                    for (int a = 0; a < 4; ++a)
                        msg.matrix[static_cast<std::size_t>(b * 4 + a)] =
                            stats.matrix.counts[b][a];
                ch.send(MsgType::epoch_result, k, msg.encode());
            } else {
                const auto msg =
                    EpochResultMsg::decode(ch.recv_expect(MsgType::epoch_result, k).payload);
                for (int b = 0; b < 4; ++b)
                    for (int a = 0; a < 4; ++a)
                        stats.matrix.counts[b][a] = msg.matrix[static_cast<std::size_t>(b * 4 + a)];
                if (msg.raw_bits != stats.raw_bits || msg.sifted_bits != stats.sifted_bits ||
                    msg.secure_bits != stats.secure_bits)
                    ch.violation(k, "epoch summary mismatch");
                stats.clock_offset = msg.clock_offset;
                stats.clock_drift = msg.clock_drift;
                stats.derive_from_matrix();
            }

            if (pending_secure) {
                if (hooks.on_secure_key) hooks.on_secure_key(*pending_secure);
                out.secure_keys.push_back(std::move(*pending_secure));
            }
            have_history = true;
            est_state.record(measured);
        } catch (const EpochAbort& a) {
            stats.aborted = true;
            stats.secure_bits = 0;
            (void)a;
        }

        for (std::size_t c = 0; c < comm_category_count; ++c) {
            stats.comm_sent[c] = out.ledger.sent[c] - ledger_before.sent[c];
            stats.comm_received[c] = out.ledger.received[c] - ledger_before.received[c];
        }
        if (hooks.on_epoch) hooks.on_epoch(stats);
        out.epochs.push_back(std::move(stats));
    }
    return out;
}

struct OfflineSessionResult {
    SessionOutcome alice;
    SessionOutcome bob;
};

// Run the real protocol over an in-memory transport, one thread per party.
inline OfflineSessionResult run_offline_session(const SessionConfig& cfg,
                                                const std::vector<DetectionEvent>& alice_events,
                                                const std::vector<DetectionEvent>& bob_events,
                                                const SessionHooks& alice_hooks = {},
                                                const SessionHooks& bob_hooks = {}) {
    auto [alice_stream, bob_stream] = make_loopback_pair();
    OfflineSessionResult result;
    std::exception_ptr alice_error;
    std::exception_ptr bob_error;

    std::thread alice_thread([&] {
        try {
            result.alice =
                run_session(cfg, Role::alice, alice_events, *alice_stream, alice_hooks);
        } catch (...) {
            alice_error = std::current_exception();
            alice_stream->close();
        }
    });
    try {
        result.bob = run_session(cfg, Role::bob, bob_events, *bob_stream, bob_hooks);
    } catch (...) {
        bob_error = std::current_exception();
        bob_stream->close();
    }
    alice_thread.join();
    if (alice_error) std::rethrow_exception(alice_error);
    if (bob_error) std::rethrow_exception(bob_error);
    return result;
}

// Single-process run: simulate both detector streams first, then hand each
// side its stream.
inline OfflineSessionResult run_offline_session(const SessionConfig& cfg,
                                                const SessionHooks& alice_hooks = {},
                                                const SessionHooks& bob_hooks = {}) {
    cfg.validate();
    const auto streams =
        generate_streams(cfg.source, cfg.alice_link, cfg.bob_link, cfg.clock,
                         cfg.duration_seconds, cfg.seed, AnalyzerSetting{cfg.alice_rotation_deg},
                         AnalyzerSetting{cfg.bob_rotation_deg});
    return run_offline_session(cfg, streams.alice, streams.bob, alice_hooks, bob_hooks);
}

}  // namespace qkd
