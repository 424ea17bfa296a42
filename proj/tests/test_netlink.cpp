#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qkd/netlink.hpp"

using namespace qkd;

namespace {

// Byte-vector transport for codec tests and malformed-input injection.
class VectorStream final : public ByteStream {
  public:
    void write_all(const std::uint8_t* data, std::size_t n) override {
        data_.insert(data_.end(), data, data + n);
    }
    void read_all(std::uint8_t* data, std::size_t n) override {
        if (pos_ + n > data_.size()) throw ProtocolError("vector stream exhausted");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(pos_), n, data);
        pos_ += n;
    }
    void put_raw(std::initializer_list<std::uint8_t> bytes) {
        data_.insert(data_.end(), bytes.begin(), bytes.end());
    }

  private:
    std::vector<std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace

TEST_CASE("frames round trip with per-category ledger accounting", "[netlink]") {
    auto [a, b] = make_loopback_pair();
    CommLedger sender, receiver;

    Frame f;
    f.type = MsgType::parity_reply;
    f.epoch_id = 7;
    f.payload = {1, 2, 3};
    write_frame(*a, f, &sender);
    const auto got = read_frame(*b, &receiver);
    CHECK(got == f);
    CHECK(got.framed_bytes() == 8);

    const auto ec = static_cast<std::size_t>(CommCategory::error_correction);
    CHECK(sender.sent[ec] == 8);
    CHECK(receiver.received[ec] == 8);
    CHECK(sender.total_sent() == 8);
    CHECK(receiver.total_received() == 8);

    Frame empty;
    empty.type = MsgType::clock_sync;
    write_frame(*a, empty, &sender);
    CHECK(read_frame(*b, &receiver).framed_bytes() == 5);
    const auto ctl = static_cast<std::size_t>(CommCategory::control);
    CHECK(sender.sent[ctl] == 5);
}

TEST_CASE("closing a loopback endpoint unblocks and fails the peer", "[netlink]") {
    auto [a, b] = make_loopback_pair();
    a->close();
    std::uint8_t byte;
    CHECK_THROWS_AS(b->read_all(&byte, 1), ProtocolError);
    CHECK_THROWS_AS(b->write_all(&byte, 1), ProtocolError);
}

TEST_CASE("frame reader rejects malformed headers", "[netlink]") {
    {
        VectorStream s;
        s.put_raw({0, 0, 0, 4, 0, 0, 0, 0, 0});
        CHECK_THROWS_AS(read_frame(s), FramingError);  // length below header
    }
    {
        VectorStream s;
        s.put_raw({0, 0, 0, 5, 13, 0, 0, 0, 0});
        CHECK_THROWS_AS(read_frame(s), FramingError);  // unknown type
    }
    {
        VectorStream s;
        s.put_raw({0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0, 0});
        CHECK_THROWS_AS(read_frame(s), FramingError);  // oversized payload
    }
    {
        Frame f;
        f.payload.resize(max_payload_bytes + 1);
        VectorStream s;
        CHECK_THROWS_AS(write_frame(s, f), FramingError);
    }
}

TEST_CASE("hello codec keeps every negotiated field", "[netlink]") {
    HelloMsg m;
    m.version = 3;
    m.role = 1;
    m.nonce = 0xdeadbeefcafe1234ull;
    m.epoch_count = 42;
    m.epoch_seconds = 2;
    m.verify_rounds = 128;
    m.n_safety = 99;
    m.estimate_mode = 2;
    m.backtrack = 1;
    m.shuffle_before = 0;
    m.parity_compat = 1;
    m.window = 13;
    const auto d = HelloMsg::decode(m.encode());
    CHECK(d.version == m.version);
    CHECK(d.role == m.role);
    CHECK(d.nonce == m.nonce);
    CHECK(d.epoch_count == m.epoch_count);
    CHECK(d.epoch_seconds == m.epoch_seconds);
    CHECK(d.verify_rounds == m.verify_rounds);
    CHECK(d.n_safety == m.n_safety);
    CHECK(d.estimate_mode == m.estimate_mode);
    CHECK(d.backtrack == m.backtrack);
    CHECK(d.shuffle_before == m.shuffle_before);
    CHECK(d.parity_compat == m.parity_compat);
    CHECK(d.window == m.window);
}

TEST_CASE("payload codecs round trip", "[netlink]") {
    {
        ClockSyncMsg m{987'654'321'000ull, 123'456};
        const auto d = ClockSyncMsg::decode(m.encode());
        CHECK(d.epoch_start_tick == m.epoch_start_tick);
        CHECK(d.event_count == m.event_count);
    }
    {
        CoincIndicesMsg m;
        m.indices = {0, 5, 6, 100, 4'000'000'000u};
        CHECK(CoincIndicesMsg::decode(m.encode()).indices == m.indices);
        CHECK(CoincIndicesMsg::decode(CoincIndicesMsg{}.encode()).indices.empty());
    }
    {
        BasisRevealMsg m;
        m.basis_bits = {1, 0, 0, 1, 1, 1, 0, 1, 0};  // non-multiple of 8
        CHECK(BasisRevealMsg::decode(m.encode()).basis_bits == m.basis_bits);
    }
    {
        EreSampleMsg m;
        m.kind = 0;
        m.sample_bits = {0, 1, 1, 0, 1};
        const auto d = EreSampleMsg::decode(m.encode());
        CHECK(d.kind == 0);
        CHECK(d.sample_bits == m.sample_bits);
        EreSampleMsg r;
        r.kind = 1;
        r.mismatches = 12;
        r.sample_size = 240;
        const auto dr = EreSampleMsg::decode(r.encode());
        CHECK(dr.mismatches == 12);
        CHECK(dr.sample_size == 240);
    }
    {
        ShuffleSeedMsg m{0x1234567890abcdefull, 0.4725};
        const auto d = ShuffleSeedMsg::decode(m.encode());
        CHECK(d.seed == m.seed);
        CHECK(d.p0 == m.p0);
    }
    {
        ParityRequestMsg m;
        m.kind = 0;
        m.pass = 3;
        m.block_size = 60;
        const auto d = ParityRequestMsg::decode(m.encode());
        CHECK(d.pass == 3);
        CHECK(d.block_size == 60);
        ParityRequestMsg rq;
        rq.kind = 1;
        rq.ranges = {{2, 10, 20}, {1, 0, 5}};
        const auto dq = ParityRequestMsg::decode(rq.encode());
        REQUIRE(dq.ranges.size() == 2);
        CHECK(dq.ranges[0].pass == 2);
        CHECK(dq.ranges[0].begin == 10);
        CHECK(dq.ranges[0].end == 20);
        CHECK(dq.ranges[1].pass == 1);
    }
    {
        PaParamsMsg m{1'000, 42, 555, 0.0492, 0.4725};
        const auto d = PaParamsMsg::decode(m.encode());
        CHECK(d.n_secure == m.n_secure);
        CHECK(d.pa_seed == m.pa_seed);
        CHECK(d.leaked_bits == m.leaked_bits);
        CHECK(d.qber_measured == m.qber_measured);
        CHECK(d.p0_used == m.p0_used);
    }
    {
        HashVerifyMsg m;
        m.rounds = 24;
        m.digest = {0xaa, 0xbb, 0xcc};
        const auto d = HashVerifyMsg::decode(m.encode());
        CHECK(d.rounds == 24);
        CHECK(d.digest == m.digest);
    }
    {
        EpochResultMsg m;
        m.raw_bits = 565;
        m.sifted_bits = 284;
        m.corrected_bits = 255;
        m.secure_bits = 85;
        m.qber_total = 0.0492;
        m.qber_x = 0.0211;
        m.qber_z = 0.0281;
        m.visibility_z = 0.886;
        m.visibility_x = 0.917;
        m.clock_offset = -123'456'789;
        m.clock_drift = 1e-8;
        for (std::size_t i = 0; i < 16; ++i) m.matrix[i] = i * i;
        const auto d = EpochResultMsg::decode(m.encode());
        CHECK(d.raw_bits == m.raw_bits);
        CHECK(d.secure_bits == m.secure_bits);
        CHECK(d.qber_total == m.qber_total);
        CHECK(d.clock_offset == m.clock_offset);
        CHECK(d.clock_drift == m.clock_drift);
        CHECK(d.matrix == m.matrix);
    }
    {
        AbortMsg m{3};
        CHECK(AbortMsg::decode(m.encode()).reason == 3);
    }
}

TEST_CASE("codecs reject truncated and oversized payloads", "[netlink]") {
    HelloMsg hello;
    auto enc = hello.encode();
    enc.pop_back();
    CHECK_THROWS_AS(HelloMsg::decode(enc), FramingError);
    enc.push_back(0);
    enc.push_back(0);
    CHECK_THROWS_AS(HelloMsg::decode(enc), FramingError);

    CoincIndicesMsg ci;
    ci.indices = {5, 4};
    CHECK_THROWS_AS(CoincIndicesMsg::decode(ci.encode()), FramingError);
    ci.indices = {5, 5};
    CHECK_THROWS_AS(CoincIndicesMsg::decode(ci.encode()), FramingError);

    EreSampleMsg bad;
    bad.kind = 2;
    auto raw = bad.encode();
    CHECK_THROWS_AS(EreSampleMsg::decode(raw), FramingError);

    ParityRequestMsg pr;
    pr.kind = 9;
    CHECK_THROWS_AS(ParityRequestMsg::decode(pr.encode()), FramingError);
}

TEST_CASE("timetag batches chunk and terminate correctly", "[netlink]") {
    const auto decode_all = [](const std::vector<Frame>& frames) {
        std::vector<DetectionEvent> events;
        bool final_seen = false;
        for (std::size_t i = 0; i < frames.size(); ++i) {
            auto [part, last] = decode_timetag_batch_frame(frames[i]);
            events.insert(events.end(), part.begin(), part.end());
            final_seen = last;
            if (last) CHECK(i == frames.size() - 1);
        }
        CHECK(final_seen);
        return events;
    };

    SECTION("empty batch is a single zero-count frame") {
        const auto frames = encode_timetag_batch({}, 3);
        REQUIRE(frames.size() == 1);
        CHECK(frames[0].epoch_id == 3);
        CHECK(frames[0].payload.size() == 4);
        CHECK(decode_all(frames).empty());
    }

    SECTION("small batch fits one final frame") {
        std::vector<DetectionEvent> events{
            {100, Channel::h}, {105, Channel::minus}, {200, Channel::plus}};
        const auto frames = encode_timetag_batch(events, 1);
        REQUIRE(frames.size() == 1);
        CHECK(decode_all(frames) == events);
    }

    SECTION("an exact multiple of the frame capacity closes with an empty frame") {
        std::vector<DetectionEvent> events(max_batch_events_per_frame);
        for (std::size_t i = 0; i < events.size(); ++i)
            events[i] = {static_cast<Tick>(i), static_cast<Channel>(i % 4)};
        const auto frames = encode_timetag_batch(events, 2);
        REQUIRE(frames.size() == 2);
        CHECK(frames[0].payload.size() == 4 + max_batch_events_per_frame * timetag_event_bytes);
        CHECK(frames[1].payload.size() == 4);
        CHECK(decode_all(frames).size() == events.size());
    }
}

TEST_CASE("batch frames validate their contents", "[netlink]") {
    Frame f;
    f.type = MsgType::timetag_batch;
    wire::Writer w;
    w.u32(2);
    w.u64(500);
    w.u8(0);
    w.u64(400);  // goes backwards
    w.u8(1);
    f.payload = w.buf;
    CHECK_THROWS_AS(decode_timetag_batch_frame(f), FramingError);

    wire::Writer w2;
    w2.u32(1);
    w2.u64(500);
    w2.u8(4);  // no such channel
    f.payload = w2.buf;
    CHECK_THROWS_AS(decode_timetag_batch_frame(f), FramingError);

    wire::Writer w3;
    w3.u32(1);
    w3.u64(500);
    w3.u8(0);
    w3.u8(0xee);  // trailing garbage
    f.payload = w3.buf;
    CHECK_THROWS_AS(decode_timetag_batch_frame(f), FramingError);

    f.type = MsgType::hello;
    CHECK_THROWS_AS(decode_timetag_batch_frame(f), FramingError);
}

TEST_CASE("parity replies pack eight per byte unless in compat mode", "[netlink]") {
    const std::vector<std::uint8_t> parities{1, 0, 1, 1, 0, 0, 1, 0, 1};
    const auto packed = encode_parities(parities, false);
    CHECK(packed.size() == 2);
    CHECK(packed[0] == 0b10110010);
    CHECK(decode_parities(packed, parities.size(), false) == parities);

    const auto compat = encode_parities(parities, true);
    CHECK(compat.size() == 9);
    CHECK(decode_parities(compat, parities.size(), true) == parities);

    CHECK_THROWS_AS(decode_parities(packed, parities.size() + 8, false), FramingError);
    CHECK_THROWS_AS(decode_parities(compat, parities.size() - 1, true), FramingError);
    const std::vector<std::uint8_t> junk{2, 0, 0};
    CHECK_THROWS_AS(decode_parities(junk, 3, true), FramingError);
}

TEST_CASE("comm load table has the six per-direction columns", "[netlink]") {
    CommLedger ledger;
    ledger.add_sent(CommCategory::coincidence, 1'000);
    ledger.add_received(CommCategory::coincidence, 500);
    ledger.add_sent(CommCategory::error_estimation, 30);
    ledger.add_received(CommCategory::error_estimation, 20);
    ledger.add_sent(CommCategory::error_correction, 200);
    ledger.add_received(CommCategory::error_correction, 100);

    const auto path = std::filesystem::temp_directory_path() / "qkd_comm_load_test.csv";
    write_comm_load(path, ledger, 10.0);
    std::ifstream in(path);
    std::string header, row;
    REQUIRE(std::getline(in, header));
    REQUIRE(std::getline(in, row));
    CHECK(header == "coin_sent_bps,coin_rec_bps,ere_sent_bps,ere_rec_bps,ec_sent_bps,ec_rec_bps");
    CHECK(row == "100.0,50.0,3.0,2.0,20.0,10.0");
    std::filesystem::remove(path);
}
