#pragma once

// Secure-key-length arithmetic, blockwise 2-universal-hash privacy
// amplification, and final key verification.
//
// The hash family is (m*k + n) mod p with p the smallest prime above the
// block size 2^B. The moduli are frozen as deltas above the power of two and
// re-checked on first use with deterministic fixed-base Miller-Rabin. Both
// parties derive per-block (m, n) from a shared seed, so amplification is a
// pure function of (key, out_len, shared_seed).

#include <gmp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "qkd/bits.hpp"
#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/rng.hpp"

namespace qkd {

struct SecureLengthInputs {
    std::uint64_t n_raw = 0;  // post-error-correction key length
    double qber = 0.0;
    std::uint64_t n_leakage = 0;
    std::uint64_t n_safety = 30;
    std::optional<double> p0;
};

// No key above the coherent-attack threshold.
inline constexpr double qber_cutoff = 0.11;

inline std::uint64_t secure_length(const SecureLengthInputs& in) {
    if (in.qber < 0.0 || in.qber > 0.5) throw ConfigError("secure_length: qber out of range");
    if (in.p0 && !(*in.p0 > 0.0 && *in.p0 < 1.0))
        throw ConfigError("secure_length: p0 out of range");
    if (in.qber >= qber_cutoff) return 0;
    const double ceiling = in.p0 ? binary_entropy(*in.p0) : 1.0;
    const double factor = ceiling - binary_entropy(in.qber);
    const double entropy = std::floor(static_cast<double>(in.n_raw) * factor);
    const double n = entropy - static_cast<double>(in.n_leakage) - static_cast<double>(in.n_safety);
    return n > 0.0 ? static_cast<std::uint64_t>(n) : 0;
}

// Best case: error correction operating at the Shannon limit.
inline std::uint64_t optimal_rate(std::uint64_t sifted_bits, double qber) {
    if (qber < 0.0 || qber > 0.5) throw ConfigError("optimal_rate: qber out of range");
    if (qber >= qber_cutoff) return 0;
    const double n = std::floor(static_cast<double>(sifted_bits) * (1.0 - 2.0 * binary_entropy(qber)));
    return n > 0.0 ? static_cast<std::uint64_t>(n) : 0;
}

class Mpz {
  public:
    Mpz() { mpz_init(z_); }
    explicit Mpz(unsigned long v) { mpz_init_set_ui(z_, v); }
    Mpz(const Mpz& o) { mpz_init_set(z_, o.z_); }
    Mpz(Mpz&& o) noexcept {
        mpz_init(z_);
        mpz_swap(z_, o.z_);
    }
    Mpz& operator=(Mpz o) noexcept {
        mpz_swap(z_, o.z_);
        return *this;
    }
    ~Mpz() { mpz_clear(z_); }

    mpz_ptr get() { return z_; }
    mpz_srcptr get() const { return z_; }

    bool operator==(const Mpz& o) const { return mpz_cmp(z_, o.z_) == 0; }
    std::size_t bit_length() const { return mpz_sizeinbase(z_, 2); }
    int test_bit(std::uint64_t i) const { return mpz_tstbit(z_, i); }
    unsigned long to_ulong() const { return mpz_get_ui(z_); }

  private:
    mpz_t z_;
};

struct HashParams {
    Mpz p;
    Mpz m;  // in [1, p)
    Mpz n;  // in [0, p)
    std::size_t out_len = 0;
};

inline Mpz universal_hash(const Mpz& k, const HashParams& params) {
    Mpz r;
    mpz_mul(r.get(), params.m.get(), k.get());
    mpz_add(r.get(), r.get(), params.n.get());
    mpz_mod(r.get(), r.get(), params.p.get());
    return r;
}

namespace detail {

// Smallest primes above 2^bits, stored as the delta.
struct PaPrimeEntry {
    unsigned bits;
    unsigned delta;
};
inline constexpr std::array<PaPrimeEntry, 4> pa_prime_table{
    {{256, 297}, {1024, 643}, {2048, 981}, {4096, 1761}}};

inline Mpz pow2_plus(unsigned bits, unsigned delta) {
    Mpz p;
    mpz_ui_pow_ui(p.get(), 2, bits);
    mpz_add_ui(p.get(), p.get(), delta);
    return p;
}

// Deterministic fixed-base Miller-Rabin over the first 64 primes.
inline bool is_probable_prime_fixed(const Mpz& n) {
    static constexpr std::array<unsigned, 64> bases{
        2,   3,   5,   7,   11,  13,  17,  19,  23,  29,  31,  37,  41,  43,  47,  53,
        59,  61,  67,  71,  73,  79,  83,  89,  97,  101, 103, 107, 109, 113, 127, 131,
        137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
        227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311};
    if (mpz_cmp_ui(n.get(), 2) < 0) return false;
    Mpz nm1(0ul), d(0ul), x, a;
    mpz_sub_ui(nm1.get(), n.get(), 1);
    mpz_set(d.get(), nm1.get());
    unsigned long s = 0;
    while (mpz_even_p(d.get())) {
        mpz_fdiv_q_2exp(d.get(), d.get(), 1);
        ++s;
    }
    for (const auto b : bases) {
        if (mpz_cmp_ui(n.get(), b) == 0) return true;
        mpz_set_ui(a.get(), b);
        mpz_powm(x.get(), a.get(), d.get(), n.get());
        if (mpz_cmp_ui(x.get(), 1) == 0 || mpz_cmp(x.get(), nm1.get()) == 0) continue;
        bool witness = true;
        for (unsigned long r = 1; r < s; ++r) {
            mpz_powm_ui(x.get(), x.get(), 2, n.get());
            if (mpz_cmp(x.get(), nm1.get()) == 0) {
                witness = false;
                break;
            }
        }
        if (witness) return false;
    }
    return true;
}

// Cached, self-checking modulus lookup.
inline const Mpz& pa_modulus(unsigned bits) {
    static const std::array<Mpz, 4> cache = [] {
        std::array<Mpz, 4> c;
        for (std::size_t i = 0; i < pa_prime_table.size(); ++i) {
            c[i] = pow2_plus(pa_prime_table[i].bits, pa_prime_table[i].delta);
            if (!is_probable_prime_fixed(c[i]))
                throw ConfigError("privacy: frozen modulus failed the primality check");
        }
        return c;
    }();
    for (std::size_t i = 0; i < pa_prime_table.size(); ++i)
        if (pa_prime_table[i].bits == bits) return cache[i];
    throw ConfigError("privacy: no modulus frozen for this block size");
}

// Near-uniform draw below mod: one extra 64-bit word beyond the modulus
// width caps the modulo bias at 2^-64.
inline Mpz draw_below(Rng& rng, const Mpz& mod) {
    const std::size_t words = (mpz_sizeinbase(mod.get(), 2) + 63) / 64 + 1;
    std::vector<std::uint64_t> buf(words);
    for (auto& w : buf) w = rng.next_u64();
    Mpz v;
    mpz_import(v.get(), buf.size(), 1, sizeof(std::uint64_t), 0, 0, buf.data());
    mpz_mod(v.get(), v.get(), mod.get());
    return v;
}

// (m, n) for one hash application, shared-seed deterministic.
inline void derive_mn(std::uint64_t shared_seed, std::uint64_t index, const Mpz& p, Mpz& m,
                      Mpz& n) {
    Rng rng(mix_seed(shared_seed, index, 0x70616d70u));
    Mpz pm1(0ul);
    mpz_sub_ui(pm1.get(), p.get(), 1);
    m = draw_below(rng, pm1);
    mpz_add_ui(m.get(), m.get(), 1);
    n = draw_below(rng, p);
}

// MSB-first bit slice as an integer.
inline Mpz mpz_from_bits(std::span<const std::uint8_t> bits) {
    Mpz k;
    if (bits.empty()) return k;
    const auto bytes = pack_bits(bits);
    mpz_import(k.get(), bytes.size(), 1, 1, 0, 0, bytes.data());
    const std::size_t pad = bytes.size() * 8 - bits.size();
    if (pad) mpz_fdiv_q_2exp(k.get(), k.get(), pad);
    return k;
}

}  // namespace detail

inline constexpr std::size_t pa_block_bits = 4096;

// Blockwise (m*k + n) mod p with the last floor(out_len*block/key) bits of
// each residue kept, concatenated in block order. The ragged final block
// reuses the full-size modulus; universality only needs p above the inputs.
inline KeyBuffer privacy_amplify(const KeyBuffer& key, std::uint64_t out_len,
                                 std::uint64_t shared_seed) {
    const std::size_t len = key.bits.size();
    if (out_len > len) throw ConfigError("privacy_amplify: out_len exceeds key length");
    KeyBuffer out;
    out.stage = KeyStage::secure;
    out.epoch_id = key.epoch_id;
    if (out_len == 0 || len == 0) return out;

    const Mpz& p = detail::pa_modulus(pa_block_bits);
    const std::size_t blocks = (len + pa_block_bits - 1) / pa_block_bits;
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t lo = b * pa_block_bits;
        const std::size_t hi = std::min(lo + pa_block_bits, len);
        const std::size_t block_len = hi - lo;
        const std::size_t kept =
            static_cast<std::size_t>(out_len * static_cast<std::uint64_t>(block_len) / len);
        if (kept == 0) continue;
        HashParams params;
        params.p = p;
        params.out_len = kept;
        detail::derive_mn(shared_seed, b, p, params.m, params.n);
        const Mpz k = detail::mpz_from_bits(
            std::span<const std::uint8_t>(key.bits).subspan(lo, block_len));
        const Mpz r = universal_hash(k, params);
        for (std::size_t i = kept; i > 0; --i)
            out.bits.push_back(static_cast<std::uint8_t>(r.test_bit(i - 1)));
    }
    return out;
}

// Packed round bits (MSB-first) of the whole-key verification hash. One bit
// per round: the parity-sized bucket lsb((m*d + n) mod p) with d the key
// folded into the amplification modulus.
inline std::vector<std::uint8_t> verification_digest(const KeyBuffer& key, int rounds,
                                                     std::uint64_t shared_seed) {
    if (key.bits.empty()) throw ConfigError("verify: empty key");
    if (rounds < 16 || rounds > 256) throw ConfigError("verify: rounds outside [16, 256]");
    const Mpz& p = detail::pa_modulus(pa_block_bits);
    Mpz d = detail::mpz_from_bits(key.bits);
    mpz_mod(d.get(), d.get(), p.get());
    std::vector<std::uint8_t> round_bits;
    round_bits.reserve(static_cast<std::size_t>(rounds));
    for (int r = 0; r < rounds; ++r) {
        HashParams params;
        params.p = p;
        detail::derive_mn(shared_seed, static_cast<std::uint64_t>(r) | (1ull << 63), p,
                          params.m, params.n);
        const Mpz h = universal_hash(d, params);
        round_bits.push_back(static_cast<std::uint8_t>(h.test_bit(0)));
    }
    return pack_bits(round_bits);
}

inline bool verify_keys(const KeyBuffer& alice_key, const KeyBuffer& bob_key, int rounds,
                        std::uint64_t shared_seed) {
    return verification_digest(alice_key, rounds, shared_seed) ==
           verification_digest(bob_key, rounds, shared_seed);
}

inline bool verify_keys(const KeyBuffer& alice_key, const KeyBuffer& bob_key,
                        std::uint64_t shared_seed) {
    return verify_keys(alice_key, bob_key, 64, shared_seed);
}

}  // namespace qkd
