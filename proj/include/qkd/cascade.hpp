#pragma once

// Error-rate estimation and the interactive cascade reconciliation protocol.
//
// The engine runs on Bob's side and corrects his key toward Alice's. Alice's
// half is abstracted as a ParityOracle: block_parities answers one parity per
// block of her permuted key, range_parities answers parities of arbitrary
// permuted index ranges (the binary-search steps). A LocalParityOracle wraps
// a key held in the same process; the network layer provides one backed by
// PARITY_REQUEST/PARITY_REPLY exchanges.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/rng.hpp"

namespace qkd {

enum class BacktrackMode { full, first_pass_only };
enum class EstimateMode { sample_10pct, previous_block, running_average };

inline const char* backtrack_mode_name(BacktrackMode m) {
    return m == BacktrackMode::full ? "full" : "first_pass_only";
}

inline const char* estimate_mode_name(EstimateMode m) {
    switch (m) {
        case EstimateMode::sample_10pct: return "sample_10pct";
        case EstimateMode::previous_block: return "previous_block";
        case EstimateMode::running_average: return "running_average";
    }
    return "?";
}

struct CascadeConfig {
    int passes = 5;
    int initial_block_size = 0;  // <= 0 selects the auto rule from qber_estimate
    BacktrackMode backtrack = BacktrackMode::full;
    EstimateMode estimate_mode = EstimateMode::sample_10pct;
    bool shuffle_before = true;
    std::uint64_t shuffle_seed = 0;  // shared between the two parties
    double qber_estimate = 0.0;      // feeds the auto block size

    std::size_t first_block_size(std::size_t key_len) const {
        if (key_len == 0) return 0;
        std::size_t k;
        if (initial_block_size > 0) {
            k = static_cast<std::size_t>(initial_block_size);
        } else if (qber_estimate > 0.0) {
            const double ideal = 0.73 / qber_estimate;
            k = ideal >= 65536.0 ? 65536
                                 : static_cast<std::size_t>(std::llround(ideal));
        } else {
            k = 65536;
        }
        k = std::max<std::size_t>(4, std::min<std::size_t>(k, 65536));
        return std::min(k, key_len);
    }

    void validate() const {
        if (passes < 1) throw ConfigError("cascade: passes must be >= 1");
        if (initial_block_size > 65536)
            throw ConfigError("cascade: initial block size above 2^16");
    }
};

struct ReconcileReport {
    KeyBuffer corrected_key;
    std::uint64_t leaked_bits = 0;
    double measured_error_rate = 0.0;
    // Diff against the reference key; NaN when the reference is remote.
    double residual_error_rate = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t parity_messages = 0;
};

// Half-open range of permuted positions within one pass.
struct ParityRange {
    int pass;
    std::uint32_t begin;
    std::uint32_t end;
};

class ParityOracle {
  public:
    virtual ~ParityOracle() = default;
    virtual std::vector<std::uint8_t> block_parities(int pass, std::uint32_t block_size) = 0;
    virtual std::vector<std::uint8_t> range_parities(std::span<const ParityRange> ranges) = 0;
};

namespace detail {

// Pass permutation shared by both parties: position i of the permuted key is
// bit perm[i] of the real key. Pass 1 is the identity unless shuffle_before.
inline std::vector<std::uint32_t> cascade_permutation(std::size_t n, int pass,
                                                      bool shuffle_before,
                                                      std::uint64_t shuffle_seed) {
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    if (pass == 1 && !shuffle_before) return perm;
    Rng rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(pass), 0x63617363u));
    for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[rng.below(i)]);
    return perm;
}

}  // namespace detail

class LocalParityOracle final : public ParityOracle {
  public:
    LocalParityOracle(std::span<const std::uint8_t> key, const CascadeConfig& cfg)
        : key_(key.begin(), key.end()), cfg_(cfg) {}

    std::vector<std::uint8_t> block_parities(int pass, std::uint32_t block_size) override {
        if (block_size == 0) throw ProtocolError("parity request with zero block size");
        const auto& perm = permutation(pass);
        const std::size_t blocks = (key_.size() + block_size - 1) / block_size;
        std::vector<std::uint8_t> out(blocks, 0);
        for (std::size_t i = 0; i < key_.size(); ++i)
            out[i / block_size] ^= key_[perm[i]];
        return out;
    }

    std::vector<std::uint8_t> range_parities(std::span<const ParityRange> ranges) override {
        std::vector<std::uint8_t> out;
        out.reserve(ranges.size());
        for (const auto& r : ranges) {
            if (r.begin > r.end || r.end > key_.size())
                throw ProtocolError("parity request out of range");
            const auto& perm = permutation(r.pass);
            std::uint8_t p = 0;
            for (std::uint32_t i = r.begin; i < r.end; ++i) p ^= key_[perm[i]];
            out.push_back(p);
        }
        return out;
    }

  private:
    const std::vector<std::uint32_t>& permutation(int pass) {
        if (pass < 1) throw ProtocolError("parity request with bad pass index");
        const auto idx = static_cast<std::size_t>(pass - 1);
        if (idx >= perms_.size()) perms_.resize(idx + 1);
        if (perms_[idx].empty() && !key_.empty())
            perms_[idx] = detail::cascade_permutation(key_.size(), pass,
                                                      cfg_.shuffle_before, cfg_.shuffle_seed);
        return perms_[idx];
    }

    std::vector<std::uint8_t> key_;
    CascadeConfig cfg_;
    std::vector<std::vector<std::uint32_t>> perms_;
};

namespace detail {

struct CascadePass {
    std::vector<std::uint32_t> perm;  // permuted position -> real index
    std::vector<std::uint32_t> inv;   // real index -> permuted position
    std::uint32_t block_size = 0;
    std::vector<std::uint8_t> bob_parity;
    std::vector<std::uint8_t> alice_parity;
};

struct CascadeOutcome {
    std::vector<std::uint8_t> bits;
    std::uint64_t leaked = 0;
    std::uint64_t messages = 0;
    std::uint64_t corrections = 0;
};

// Bob-side engine. Each parity-mismatched block carries an odd number of
// errors, so its binary search always lands on a genuine error; every
// correction toggles the containing block's parity in every built pass, and
// newly mismatched blocks are re-queued per the backtrack mode.
inline CascadeOutcome run_cascade(std::span<const std::uint8_t> bob_bits,
                                  const CascadeConfig& cfg, ParityOracle& oracle) {
    cfg.validate();
    CascadeOutcome out;
    out.bits.assign(bob_bits.begin(), bob_bits.end());
    const std::size_t n = out.bits.size();
    if (n == 0) return out;

    std::vector<CascadePass> built;
    std::deque<std::pair<std::size_t, std::size_t>> queue;  // (pass index, block)

    const auto drain = [&](std::size_t current) {
        while (!queue.empty()) {
            const auto [pi, b] = queue.front();
            queue.pop_front();
            auto& P = built[pi];
            if (P.bob_parity[b] == P.alice_parity[b]) continue;
            std::size_t lo = b * static_cast<std::size_t>(P.block_size);
            std::size_t hi = std::min(lo + P.block_size, n);
            while (hi - lo > 1) {
                const std::size_t mid = (lo + hi) / 2;
                std::uint8_t bp = 0;
                for (std::size_t i = lo; i < mid; ++i) bp ^= out.bits[P.perm[i]];
                const ParityRange req{static_cast<int>(pi) + 1,
                                      static_cast<std::uint32_t>(lo),
                                      static_cast<std::uint32_t>(mid)};
                const auto reply = oracle.range_parities({&req, 1});
                if (reply.size() != 1) throw ProtocolError("parity reply size mismatch");
                out.leaked += 1;
                out.messages += 1;
                if (reply[0] != bp)
                    hi = mid;
                else
                    lo = mid;
            }
            const std::uint32_t real = built[pi].perm[lo];
            out.bits[real] ^= 1;
            out.corrections += 1;
            for (std::size_t q = 0; q < built.size(); ++q) {
                auto& Q = built[q];
                const std::size_t blk = Q.inv[real] / Q.block_size;
                Q.bob_parity[blk] ^= 1;
                const bool mismatched = Q.bob_parity[blk] != Q.alice_parity[blk];
                const bool eligible = cfg.backtrack == BacktrackMode::full ||
                                      q == 0 || q == current;
                if (mismatched && eligible) queue.emplace_back(q, blk);
            }
        }
    };

    const std::size_t k1 = cfg.first_block_size(n);
    for (int pass = 1; pass <= cfg.passes; ++pass) {
        CascadePass P;
        std::size_t k = k1;
        for (int p = 1; p < pass && k < n; ++p) k *= 2;
        P.block_size = static_cast<std::uint32_t>(std::min(k, n));
        P.perm = detail::cascade_permutation(n, pass, cfg.shuffle_before, cfg.shuffle_seed);
        P.inv.resize(n);
        for (std::size_t i = 0; i < n; ++i) P.inv[P.perm[i]] = static_cast<std::uint32_t>(i);
        const std::size_t blocks = (n + P.block_size - 1) / P.block_size;
        P.bob_parity.assign(blocks, 0);
        for (std::size_t i = 0; i < n; ++i)
            P.bob_parity[i / P.block_size] ^= out.bits[P.perm[i]];
        P.alice_parity = oracle.block_parities(pass, P.block_size);
        if (P.alice_parity.size() != blocks) throw ProtocolError("block parity count mismatch");
        out.leaked += blocks;
        out.messages += 1;
        built.push_back(std::move(P));
        const std::size_t pi = built.size() - 1;
        for (std::size_t b = 0; b < blocks; ++b)
            if (built[pi].bob_parity[b] != built[pi].alice_parity[b]) queue.emplace_back(pi, b);
        drain(pi);
    }
    return out;
}

}  // namespace detail

// Two-key form: both keys in hand, parities flow through the given channel.
// The residual error rate is the post-protocol diff against alice's key.
inline ReconcileReport cascade(const KeyBuffer& alice, const KeyBuffer& bob,
                               const CascadeConfig& cfg, ParityOracle& parity_channel) {
    if (alice.bits.size() != bob.bits.size())
        throw ConfigError("cascade: key lengths differ");
    auto outcome = detail::run_cascade(bob.bits, cfg, parity_channel);
    ReconcileReport r;
    const std::size_t n = outcome.bits.size();
    std::size_t residual = 0;
    for (std::size_t i = 0; i < n; ++i) residual += alice.bits[i] != outcome.bits[i];
    r.corrected_key.bits = std::move(outcome.bits);
    r.corrected_key.stage = KeyStage::corrected;
    r.corrected_key.epoch_id = bob.epoch_id;
    r.leaked_bits = outcome.leaked;
    r.parity_messages = outcome.messages;
    r.measured_error_rate = n ? static_cast<double>(outcome.corrections) / static_cast<double>(n) : 0.0;
    r.residual_error_rate = n ? static_cast<double>(residual) / static_cast<double>(n) : 0.0;
    return r;
}

inline ReconcileReport cascade(const KeyBuffer& alice, const KeyBuffer& bob,
                               const CascadeConfig& cfg) {
    LocalParityOracle oracle(alice.bits, cfg);
    return cascade(alice, bob, cfg, oracle);
}

struct EstimateState {
    std::vector<double> history;  // cascade-measured rates, oldest first
    std::size_t window = 5;

    void record(double rate) { history.push_back(rate); }
    double previous() const { return history.empty() ? 0.0 : history.back(); }
    double running_average() const {
        if (history.empty()) return 0.0;
        const std::size_t take = std::min(window, history.size());
        double sum = 0.0;
        for (std::size_t i = history.size() - take; i < history.size(); ++i) sum += history[i];
        return sum / static_cast<double>(take);
    }
};

struct EstimateResult {
    double estimate = 0.0;
    KeyBuffer remaining_alice;
    KeyBuffer remaining_bob;
    std::size_t revealed = 0;
};

namespace detail {

// The sampled index set, sorted ascending. Both parties derive it from the
// same seeded rng.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i)
        std::swap(all[i], all[i + rng.below(n - i)]);
    all.resize(m);
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace detail

// sample_10pct publicly compares a random tenth of the key and removes it
// from both sides; the memory-based modes reveal nothing and echo the stored
// rate.
inline EstimateResult estimate_error_rate(const KeyBuffer& alice_sifted,
                                          const KeyBuffer& bob_sifted, EstimateMode mode,
                                          Rng& rng, const EstimateState* state = nullptr) {
    if (alice_sifted.bits.size() != bob_sifted.bits.size())
        throw ConfigError("error estimate: key lengths differ");
    if (alice_sifted.bits.empty()) throw ConfigError("error estimate: empty key");

    EstimateResult r;
    if (mode != EstimateMode::sample_10pct) {
        r.estimate = !state ? 0.0
                     : mode == EstimateMode::previous_block ? state->previous()
                                                            : state->running_average();
        r.remaining_alice = alice_sifted;
        r.remaining_bob = bob_sifted;
        return r;
    }

    const std::size_t n = alice_sifted.bits.size();
    if (n < 10) throw ConfigError("error estimate: key too short to sample");
    const std::size_t m = n / 10;
    const auto sample = detail::sample_indices(n, m, rng);
    std::size_t mismatches = 0;
    for (const auto i : sample) mismatches += alice_sifted.bits[i] != bob_sifted.bits[i];
    r.estimate = static_cast<double>(mismatches) / static_cast<double>(m);
    r.revealed = m;
    r.remaining_alice.stage = alice_sifted.stage;
    r.remaining_alice.epoch_id = alice_sifted.epoch_id;
    r.remaining_bob.stage = bob_sifted.stage;
    r.remaining_bob.epoch_id = bob_sifted.epoch_id;
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (next < sample.size() && sample[next] == i) {
            ++next;
            continue;
        }
        r.remaining_alice.bits.push_back(alice_sifted.bits[i]);
        r.remaining_bob.bits.push_back(bob_sifted.bits[i]);
    }
    return r;
}

// Parities revealed per corrected bit of Shannon-minimum information.
inline double leakage_efficiency(const ReconcileReport& report, double true_qber) {
    if (report.corrected_key.bits.empty())
        throw ConfigError("leakage efficiency: empty corrected key");
    if (!(true_qber > 0.0))
        throw std::domain_error("leakage efficiency undefined at zero error rate");
    const double n = static_cast<double>(report.corrected_key.bits.size());
    return static_cast<double>(report.leaked_bits) / (n * binary_entropy(true_qber));
}

}  // namespace qkd
