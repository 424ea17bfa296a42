#pragma once

// The classical channel: framed messages over a reliable byte stream, with
// per-category byte accounting.
//
// Frame layout: 4-byte big-endian length, then msg_type (1 byte), epoch_id
// (4 bytes big-endian), payload. The length counts msg_type + epoch_id +
// payload, so an empty payload gives length 5. A zero-length MAC trailer is
// reserved after the payload; the channel is deliberately unauthenticated.
// Payload integers are little-endian, mirroring the timetag file format.
// Ledger byte counts cover the framed bytes (length value), excluding the
// 4-byte length prefix itself.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "qkd/bits.hpp"
#include "qkd/cascade.hpp"
#include "qkd/core.hpp"
#include "qkd/errors.hpp"

namespace qkd {

inline constexpr std::uint16_t default_port = 4187;
inline constexpr std::size_t max_payload_bytes = 16 * 1024 * 1024;
inline constexpr std::size_t timetag_event_bytes = 9;
inline constexpr std::size_t max_batch_events_per_frame =
    (max_payload_bytes - 4) / timetag_event_bytes;

enum class MsgType : std::uint8_t {
    hello = 0,
    clock_sync = 1,
    timetag_batch = 2,
    coinc_indices = 3,
    basis_reveal = 4,
    ere_sample = 5,
    parity_request = 6,
    parity_reply = 7,
    shuffle_seed = 8,
    pa_params = 9,
    hash_verify = 10,
    epoch_result = 11,
    abort = 12,
};

inline const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::hello: return "HELLO";
        case MsgType::clock_sync: return "CLOCK_SYNC";
        case MsgType::timetag_batch: return "TIMETAG_BATCH";
        case MsgType::coinc_indices: return "COINC_INDICES";
        case MsgType::basis_reveal: return "BASIS_REVEAL";
        case MsgType::ere_sample: return "ERE_SAMPLE";
        case MsgType::parity_request: return "PARITY_REQUEST";
        case MsgType::parity_reply: return "PARITY_REPLY";
        case MsgType::shuffle_seed: return "SHUFFLE_SEED";
        case MsgType::pa_params: return "PA_PARAMS";
        case MsgType::hash_verify: return "HASH_VERIFY";
        case MsgType::epoch_result: return "EPOCH_RESULT";
        case MsgType::abort: return "ABORT";
    }
    return "?";
}

inline CommCategory category_of(MsgType t) {
    switch (t) {
        case MsgType::timetag_batch:
        case MsgType::coinc_indices:
        case MsgType::basis_reveal: return CommCategory::coincidence;
        case MsgType::ere_sample: return CommCategory::error_estimation;
        case MsgType::parity_request:
        case MsgType::parity_reply:
        case MsgType::shuffle_seed: return CommCategory::error_correction;
        case MsgType::pa_params:
        case MsgType::hash_verify: return CommCategory::privacy_amp;
        case MsgType::hello:
        case MsgType::clock_sync:
        case MsgType::epoch_result:
        case MsgType::abort: return CommCategory::control;
    }
    return CommCategory::control;
}

struct Frame {
    MsgType type = MsgType::hello;
    std::uint32_t epoch_id = 0;
    std::vector<std::uint8_t> payload;

    std::uint64_t framed_bytes() const { return 5 + payload.size(); }

    friend bool operator==(const Frame&, const Frame&) = default;
};

struct CommLedger {
    std::array<std::uint64_t, comm_category_count> sent{};
    std::array<std::uint64_t, comm_category_count> received{};

    void add_sent(CommCategory c, std::uint64_t bytes) {
        sent[static_cast<std::size_t>(c)] += bytes;
    }
    void add_received(CommCategory c, std::uint64_t bytes) {
        received[static_cast<std::size_t>(c)] += bytes;
    }
    std::uint64_t total_sent() const {
        std::uint64_t t = 0;
        for (auto v : sent) t += v;
        return t;
    }
    std::uint64_t total_received() const {
        std::uint64_t t = 0;
        for (auto v : received) t += v;
        return t;
    }
};

// Average bytes per second for the coincidence, error estimation, and error
// correction categories, each direction.
inline void write_comm_load(const std::filesystem::path& path, const CommLedger& ledger,
                            double duration_seconds) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    const double dt = duration_seconds > 0 ? duration_seconds : 1.0;
    const auto row = [&](CommCategory c, bool sent_side) {
        const auto& a = sent_side ? ledger.sent : ledger.received;
        return static_cast<double>(a[static_cast<std::size_t>(c)]) / dt;
    };
    out << "coin_sent_bps,coin_rec_bps,ere_sent_bps,ere_rec_bps,ec_sent_bps,ec_rec_bps\n";
    char buf[200];
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%.1f,%.1f,%.1f,%.1f\n",
                  row(CommCategory::coincidence, true), row(CommCategory::coincidence, false),
                  row(CommCategory::error_estimation, true),
                  row(CommCategory::error_estimation, false),
                  row(CommCategory::error_correction, true),
                  row(CommCategory::error_correction, false));
    out << buf;
}

// Reliable ordered byte stream. read_all blocks until the requested bytes
// arrive and throws on a closed or failed transport.
class ByteStream {
  public:
    virtual ~ByteStream() = default;
    virtual void write_all(const std::uint8_t* data, std::size_t n) = 0;
    virtual void read_all(std::uint8_t* data, std::size_t n) = 0;
    virtual void close() {}
};

namespace detail {

struct LoopbackQueue {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::uint8_t> bytes;
    bool closed = false;
};

}  // namespace detail

// In-process transport: a pair of cross-wired endpoints.
class LoopbackStream final : public ByteStream {
  public:
    LoopbackStream(std::shared_ptr<detail::LoopbackQueue> in,
                   std::shared_ptr<detail::LoopbackQueue> out)
        : in_(std::move(in)), out_(std::move(out)) {}

    void write_all(const std::uint8_t* data, std::size_t n) override {
        std::lock_guard lock(out_->mu);
        if (out_->closed) throw ProtocolError("loopback: peer closed");
        out_->bytes.insert(out_->bytes.end(), data, data + n);
        out_->cv.notify_all();
    }

    void read_all(std::uint8_t* data, std::size_t n) override {
        std::unique_lock lock(in_->mu);
        for (std::size_t i = 0; i < n; ++i) {
            in_->cv.wait(lock, [&] { return !in_->bytes.empty() || in_->closed; });
            if (in_->bytes.empty()) throw ProtocolError("loopback: stream closed");
            data[i] = in_->bytes.front();
            in_->bytes.pop_front();
        }
    }

    void close() override {
        for (auto* q : {in_.get(), out_.get()}) {
            std::lock_guard lock(q->mu);
            q->closed = true;
            q->cv.notify_all();
        }
    }

  private:
    std::shared_ptr<detail::LoopbackQueue> in_;
    std::shared_ptr<detail::LoopbackQueue> out_;
};

inline std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_loopback_pair() {
    auto a = std::make_shared<detail::LoopbackQueue>();
    auto b = std::make_shared<detail::LoopbackQueue>();
    return {std::make_unique<LoopbackStream>(a, b), std::make_unique<LoopbackStream>(b, a)};
}

class TcpStream final : public ByteStream {
  public:
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;
    ~TcpStream() override { close(); }

    void write_all(const std::uint8_t* data, std::size_t n) override {
        while (n > 0) {
            const auto w = ::send(fd_, data, n, 0);
            if (w <= 0) throw ProtocolError("tcp send failed");
            data += w;
            n -= static_cast<std::size_t>(w);
        }
    }

    void read_all(std::uint8_t* data, std::size_t n) override {
        while (n > 0) {
            const auto r = ::recv(fd_, data, n, 0);
            if (r <= 0) throw ProtocolError("tcp recv failed or connection closed");
            data += r;
            n -= static_cast<std::size_t>(r);
        }
    }

    void close() override {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

  private:
    int fd_ = -1;
};

inline std::unique_ptr<ByteStream> tcp_connect(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0)
        throw ProtocolError("cannot resolve " + host);
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw ProtocolError("connection to " + host + " refused");
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpStream>(fd);
}

inline std::unique_ptr<ByteStream> tcp_accept_one(std::uint16_t port) {
    const int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (lfd < 0) throw ProtocolError("cannot create listening socket");
    const int one = 1;
    ::setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(lfd, 1) != 0) {
        ::close(lfd);
        throw ProtocolError("cannot listen on port " + std::to_string(port));
    }
    const int fd = ::accept(lfd, nullptr, nullptr);
    ::close(lfd);
    if (fd < 0) throw ProtocolError("accept failed");
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::make_unique<TcpStream>(fd);
}

inline void write_frame(ByteStream& stream, const Frame& frame, CommLedger* ledger = nullptr) {
    if (frame.payload.size() > max_payload_bytes) throw FramingError("payload exceeds 16 MiB");
    std::vector<std::uint8_t> head(9);
    const std::uint32_t length = static_cast<std::uint32_t>(frame.payload.size() + 5);
    head[0] = static_cast<std::uint8_t>(length >> 24);
    head[1] = static_cast<std::uint8_t>(length >> 16);
    head[2] = static_cast<std::uint8_t>(length >> 8);
    head[3] = static_cast<std::uint8_t>(length);
    head[4] = static_cast<std::uint8_t>(frame.type);
    head[5] = static_cast<std::uint8_t>(frame.epoch_id >> 24);
    head[6] = static_cast<std::uint8_t>(frame.epoch_id >> 16);
    head[7] = static_cast<std::uint8_t>(frame.epoch_id >> 8);
    head[8] = static_cast<std::uint8_t>(frame.epoch_id);
    stream.write_all(head.data(), head.size());
    if (!frame.payload.empty()) stream.write_all(frame.payload.data(), frame.payload.size());
    if (ledger) ledger->add_sent(category_of(frame.type), frame.framed_bytes());
}

inline Frame read_frame(ByteStream& stream, CommLedger* ledger = nullptr) {
    std::uint8_t head[9];
    stream.read_all(head, 4);
    const std::uint32_t length = (std::uint32_t{head[0]} << 24) | (std::uint32_t{head[1]} << 16) |
                                 (std::uint32_t{head[2]} << 8) | std::uint32_t{head[3]};
    if (length < 5) throw FramingError("frame length below header size");
    if (length - 5 > max_payload_bytes) throw FramingError("frame payload exceeds 16 MiB");
    stream.read_all(head + 4, 5);
    if (head[4] > static_cast<std::uint8_t>(MsgType::abort))
        throw FramingError("unknown message type");
    Frame f;
    f.type = static_cast<MsgType>(head[4]);
    f.epoch_id = (std::uint32_t{head[5]} << 24) | (std::uint32_t{head[6]} << 16) |
                 (std::uint32_t{head[7]} << 8) | std::uint32_t{head[8]};
    f.payload.resize(length - 5);
    if (!f.payload.empty()) stream.read_all(f.payload.data(), f.payload.size());
    if (ledger) ledger->add_received(category_of(f.type), f.framed_bytes());
    return f;
}

namespace wire {

struct Writer {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { buf.insert(buf.end(), b.begin(), b.end()); }
};

struct Reader {
    std::span<const std::uint8_t> in;
    std::size_t pos = 0;

    explicit Reader(std::span<const std::uint8_t> data) : in(data) {}

    std::uint8_t u8() {
        need(1);
        return in[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{in[pos++]} << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{in[pos++]} << (8 * i);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> b(in.begin() + static_cast<std::ptrdiff_t>(pos),
                                    in.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return b;
    }
    void need(std::size_t n) const {
        if (pos + n > in.size()) throw FramingError("payload truncated");
    }
    void expect_end() const {
        if (pos != in.size()) throw FramingError("trailing bytes in payload");
    }
};

}  // namespace wire

struct HelloMsg {
    std::uint32_t version = 1;
    std::uint8_t role = 0;  // 0 alice, 1 bob
    std::uint64_t nonce = 0;
    std::uint32_t epoch_count = 0;
    std::uint32_t epoch_seconds = 1;
    std::uint32_t verify_rounds = 64;
    std::uint32_t n_safety = 30;
    std::uint8_t estimate_mode = 0;
    std::uint8_t backtrack = 0;
    std::uint8_t shuffle_before = 1;
    std::uint8_t parity_compat = 0;
    std::uint32_t window = 13;

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u32(version);
        w.u8(role);
        w.u64(nonce);
        w.u32(epoch_count);
        w.u32(epoch_seconds);
        w.u32(verify_rounds);
        w.u32(n_safety);
        w.u8(estimate_mode);
        w.u8(backtrack);
        w.u8(shuffle_before);
        w.u8(parity_compat);
        w.u32(window);
        return std::move(w.buf);
    }
    static HelloMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        HelloMsg m;
        m.version = r.u32();
        m.role = r.u8();
        m.nonce = r.u64();
        m.epoch_count = r.u32();
        m.epoch_seconds = r.u32();
        m.verify_rounds = r.u32();
        m.n_safety = r.u32();
        m.estimate_mode = r.u8();
        m.backtrack = r.u8();
        m.shuffle_before = r.u8();
        m.parity_compat = r.u8();
        m.window = r.u32();
        r.expect_end();
        return m;
    }
};

struct ClockSyncMsg {
    std::uint64_t epoch_start_tick = 0;  // sender-local clock
    std::uint64_t event_count = 0;       // sender's detections in the epoch

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u64(epoch_start_tick);
        w.u64(event_count);
        return std::move(w.buf);
    }
    static ClockSyncMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        ClockSyncMsg m;
        m.epoch_start_tick = r.u64();
        m.event_count = r.u64();
        r.expect_end();
        return m;
    }
};

// Timetag batches mirror the file format: 4-byte count, then 9 bytes per
// event (8-byte little-endian tick + channel byte). A batch larger than one
// frame continues across frames; any frame carrying fewer than the per-frame
// maximum ends the batch, so an exact multiple is closed by an empty frame.
inline std::vector<Frame> encode_timetag_batch(std::span<const DetectionEvent> events,
                                               std::uint32_t epoch_id) {
    std::vector<Frame> frames;
    std::size_t done = 0;
    do {
        const std::size_t n = std::min(events.size() - done, max_batch_events_per_frame);
        Frame f;
        f.type = MsgType::timetag_batch;
        f.epoch_id = epoch_id;
        wire::Writer w;
        w.u32(static_cast<std::uint32_t>(n));
        for (std::size_t i = done; i < done + n; ++i) {
            w.u64(events[i].time);
            w.u8(static_cast<std::uint8_t>(events[i].channel));
        }
        f.payload = std::move(w.buf);
        frames.push_back(std::move(f));
        done += n;
    } while (done < events.size());
    if (!frames.empty() && frames.back().payload.size() ==
                               4 + max_batch_events_per_frame * timetag_event_bytes) {
        Frame tail;
        tail.type = MsgType::timetag_batch;
        tail.epoch_id = epoch_id;
        wire::Writer w;
        w.u32(0);
        tail.payload = std::move(w.buf);
        frames.push_back(std::move(tail));
    }
    return frames;
}

// One frame's worth of events; final is true when this frame ends the batch.
inline std::pair<std::vector<DetectionEvent>, bool> decode_timetag_batch_frame(const Frame& f) {
    if (f.type != MsgType::timetag_batch) throw FramingError("not a timetag batch frame");
    wire::Reader r(f.payload);
    const std::uint32_t n = r.u32();
    if (n > max_batch_events_per_frame) throw FramingError("batch frame count exceeds maximum");
    std::vector<DetectionEvent> events;
    events.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        DetectionEvent e;
        e.time = r.u64();
        const auto c = r.u8();
        if (c > 3) throw FramingError("bad channel code in batch");
        e.channel = static_cast<Channel>(c);
        if (!events.empty() && e.time < events.back().time)
            throw FramingError("batch events out of order");
        events.push_back(e);
    }
    r.expect_end();
    return {std::move(events), n < max_batch_events_per_frame};
}

struct CoincIndicesMsg {
    std::vector<std::uint32_t> indices;  // ascending positions in the sender's batch

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u32(static_cast<std::uint32_t>(indices.size()));
        for (auto i : indices) w.u32(i);
        return std::move(w.buf);
    }
    static CoincIndicesMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        CoincIndicesMsg m;
        const std::uint32_t n = r.u32();
        m.indices.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t v = r.u32();
            if (!m.indices.empty() && v <= m.indices.back())
                throw FramingError("coincidence indices not ascending");
            m.indices.push_back(v);
        }
        r.expect_end();
        return m;
    }
};

struct BasisRevealMsg {
    std::vector<std::uint8_t> basis_bits;  // 1 = diagonal basis, aligned with the index list

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u32(static_cast<std::uint32_t>(basis_bits.size()));
        w.bytes(pack_bits(basis_bits));
        return std::move(w.buf);
    }
    static BasisRevealMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        BasisRevealMsg m;
        const std::uint32_t n = r.u32();
        const auto packed = r.bytes((n + 7) / 8);
        r.expect_end();
        m.basis_bits = unpack_bits(packed, n);
        return m;
    }
};

// kind 0: one side's sampled key bits; kind 1: the comparison outcome.
struct EreSampleMsg {
    std::uint8_t kind = 0;
    std::vector<std::uint8_t> sample_bits;  // kind 0
    std::uint32_t mismatches = 0;           // kind 1
    std::uint32_t sample_size = 0;          // kind 1

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u8(kind);
        if (kind == 0) {
            w.u32(static_cast<std::uint32_t>(sample_bits.size()));
            w.bytes(pack_bits(sample_bits));
        } else {
            w.u32(mismatches);
            w.u32(sample_size);
        }
        return std::move(w.buf);
    }
    static EreSampleMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        EreSampleMsg m;
        m.kind = r.u8();
        if (m.kind == 0) {
            const std::uint32_t n = r.u32();
            m.sample_bits = unpack_bits(r.bytes((n + 7) / 8), n);
        } else if (m.kind == 1) {
            m.mismatches = r.u32();
            m.sample_size = r.u32();
        } else {
            throw FramingError("bad ERE_SAMPLE kind");
        }
        r.expect_end();
        return m;
    }
};

// Seeds the shared cascade permutations; carries the reference key's bit
// bias measured by alice over this epoch's raw pairs.
struct ShuffleSeedMsg {
    std::uint64_t seed = 0;
    double p0 = 0.5;

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u64(seed);
        w.f64(p0);
        return std::move(w.buf);
    }
    static ShuffleSeedMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        ShuffleSeedMsg m;
        m.seed = r.u64();
        m.p0 = r.f64();
        r.expect_end();
        return m;
    }
};

struct ParityRequestMsg {
    std::uint8_t kind = 0;  // 0: whole-key block parities; 1: explicit ranges
    std::uint32_t pass = 0;
    std::uint32_t block_size = 0;
    std::vector<ParityRange> ranges;

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u8(kind);
        if (kind == 0) {
            w.u32(pass);
            w.u32(block_size);
        } else {
            w.u32(static_cast<std::uint32_t>(ranges.size()));
            for (const auto& r : ranges) {
                w.u32(static_cast<std::uint32_t>(r.pass));
                w.u32(r.begin);
                w.u32(r.end);
            }
        }
        return std::move(w.buf);
    }
    static ParityRequestMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        ParityRequestMsg m;
        m.kind = r.u8();
        if (m.kind == 0) {
            m.pass = r.u32();
            m.block_size = r.u32();
        } else if (m.kind == 1) {
            const std::uint32_t n = r.u32();
            m.ranges.reserve(n);
            for (std::uint32_t i = 0; i < n; ++i) {
                ParityRange range;
                range.pass = static_cast<int>(r.u32());
                range.begin = r.u32();
                range.end = r.u32();
                m.ranges.push_back(range);
            }
        } else {
            throw FramingError("bad PARITY_REQUEST kind");
        }
        r.expect_end();
        return m;
    }
};

// Replies carry only the parity values: packed eight per byte, or one byte
// per parity in the compat mode that mirrors the original implementation.
// The requester knows the count.
inline std::vector<std::uint8_t> encode_parities(std::span<const std::uint8_t> parities,
                                                 bool compat_byte_per_parity) {
    if (compat_byte_per_parity)
        return std::vector<std::uint8_t>(parities.begin(), parities.end());
    return pack_bits(parities);
}

inline std::vector<std::uint8_t> decode_parities(std::span<const std::uint8_t> payload,
                                                 std::size_t count, bool compat_byte_per_parity) {
    if (compat_byte_per_parity) {
        if (payload.size() != count) throw FramingError("parity reply size mismatch");
        std::vector<std::uint8_t> out(payload.begin(), payload.end());
        for (const auto b : out)
            if (b > 1) throw FramingError("parity byte not 0/1");
        return out;
    }
    if (payload.size() != (count + 7) / 8) throw FramingError("parity reply size mismatch");
    return unpack_bits(payload, count);
}

struct PaParamsMsg {
    std::uint64_t n_secure = 0;
    std::uint64_t pa_seed = 0;
    std::uint64_t leaked_bits = 0;
    double qber_measured = 0.0;
    double p0_used = 0.5;

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u64(n_secure);
        w.u64(pa_seed);
        w.u64(leaked_bits);
        w.f64(qber_measured);
        w.f64(p0_used);
        return std::move(w.buf);
    }
    static PaParamsMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        PaParamsMsg m;
        m.n_secure = r.u64();
        m.pa_seed = r.u64();
        m.leaked_bits = r.u64();
        m.qber_measured = r.f64();
        m.p0_used = r.f64();
        r.expect_end();
        return m;
    }
};

struct HashVerifyMsg {
    std::uint32_t rounds = 64;
    std::vector<std::uint8_t> digest;

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u32(rounds);
        w.bytes(digest);
        return std::move(w.buf);
    }
    static HashVerifyMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        HashVerifyMsg m;
        m.rounds = r.u32();
        m.digest = r.bytes((m.rounds + 7) / 8);
        r.expect_end();
        return m;
    }
};

struct EpochResultMsg {
    std::uint64_t raw_bits = 0;
    std::uint64_t sifted_bits = 0;
    std::uint64_t corrected_bits = 0;
    std::uint64_t secure_bits = 0;
    double qber_total = 0.0;
    double qber_x = 0.0;
    double qber_z = 0.0;
    double visibility_z = 0.0;
    double visibility_x = 0.0;
    std::int64_t clock_offset = 0;
    double clock_drift = 0.0;
    std::array<std::uint64_t, 16> matrix{};

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u64(raw_bits);
        w.u64(sifted_bits);
        w.u64(corrected_bits);
        w.u64(secure_bits);
        w.f64(qber_total);
        w.f64(qber_x);
        w.f64(qber_z);
        w.f64(visibility_z);
        w.f64(visibility_x);
        w.i64(clock_offset);
        w.f64(clock_drift);
        for (auto v : matrix) w.u64(v);
        return std::move(w.buf);
    }
    static EpochResultMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        EpochResultMsg m;
        m.raw_bits = r.u64();
        m.sifted_bits = r.u64();
        m.corrected_bits = r.u64();
        m.secure_bits = r.u64();
        m.qber_total = r.f64();
        m.qber_x = r.f64();
        m.qber_z = r.f64();
        m.visibility_z = r.f64();
        m.visibility_x = r.f64();
        m.clock_offset = r.i64();
        m.clock_drift = r.f64();
        for (auto& v : m.matrix) v = r.u64();
        r.expect_end();
        return m;
    }
};

struct AbortMsg {
    std::uint8_t reason = 0;

    std::vector<std::uint8_t> encode() const { return {reason}; }
    static AbortMsg decode(std::span<const std::uint8_t> p) {
        wire::Reader r(p);
        AbortMsg m;
        m.reason = r.u8();
        r.expect_end();
        return m;
    }
};

}  // namespace qkd
