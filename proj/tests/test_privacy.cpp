#include <catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "qkd/privacy.hpp"
#include "qkd/rng.hpp"

using namespace qkd;

namespace {

KeyBuffer random_key(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    KeyBuffer k;
    k.stage = KeyStage::corrected;
    k.bits.resize(n);
    for (auto& b : k.bits) b = rng.bernoulli(0.5) ? 1 : 0;
    return k;
}

}  // namespace

TEST_CASE("secure length follows the entropy budget", "[privacy]") {
    CHECK(secure_length({100'000, 0.0492, 30'000, 30, {}}) == 41'671);
    CHECK(secure_length({100'000, 0.0492, 30'000, 30, 0.4725261129946849}) == 41'453);
    CHECK(secure_length({100, 0.05, 100, 30, {}}) == 0);  // clamps at zero
    CHECK(secure_length({1'000, 0.0, 0, 0, {}}) == 1'000);
}

TEST_CASE("no key above the error-rate cutoff", "[privacy]") {
    CHECK(secure_length({1'000'000, 0.11, 0, 0, {}}) == 0);
    CHECK(secure_length({1'000'000, 0.25, 0, 0, {}}) == 0);
    CHECK(secure_length({1'000'000, 0.1099, 0, 0, {}}) > 0);
    CHECK(optimal_rate(1'000'000, 0.11) == 0);
    CHECK(optimal_rate(1'000'000, 0.5) == 0);
}

TEST_CASE("secure length validates its inputs", "[privacy]") {
    CHECK_THROWS_AS(secure_length({100, -0.01, 0, 0, {}}), ConfigError);
    CHECK_THROWS_AS(secure_length({100, 0.51, 0, 0, {}}), ConfigError);
    CHECK_THROWS_AS(secure_length({100, 0.05, 0, 0, 0.0}), ConfigError);
    CHECK_THROWS_AS(secure_length({100, 0.05, 0, 0, 1.0}), ConfigError);
    CHECK_THROWS_AS(optimal_rate(100, -0.1), ConfigError);
}

TEST_CASE("optimal rate doubles the entropy penalty", "[privacy]") {
    CHECK(optimal_rate(284, 0.0492) == 123);
    CHECK(optimal_rate(1'000, 0.03) == 611);
    CHECK(optimal_rate(1'000, 0.0) == 1'000);
    CHECK(optimal_rate(0, 0.03) == 0);
}

TEST_CASE("frozen moduli pass the primality check", "[privacy]") {
    for (const auto& e : detail::pa_prime_table) {
        const auto& p = detail::pa_modulus(e.bits);
        CHECK(p.bit_length() == e.bits + 1);
        Mpz low;
        mpz_tdiv_r_2exp(low.get(), p.get(), 64);
        CHECK(low.to_ulong() == e.delta);
    }
    CHECK_THROWS_AS(detail::pa_modulus(512), ConfigError);
}

TEST_CASE("fixed-base rabin-miller agrees on known cases", "[privacy]") {
    const auto probe = [](unsigned long v) {
        return detail::is_probable_prime_fixed(Mpz(v));
    };
    CHECK(probe(2));
    CHECK(probe(97));
    CHECK(probe(65'537));
    CHECK_FALSE(probe(1));
    CHECK_FALSE(probe(91));
    CHECK_FALSE(probe(561));      // Carmichael
    CHECK_FALSE(probe(294'409));  // Carmichael
    Mpz mersenne;
    mpz_ui_pow_ui(mersenne.get(), 2, 61);
    mpz_sub_ui(mersenne.get(), mersenne.get(), 1);
    CHECK(detail::is_probable_prime_fixed(mersenne));
    mpz_add_ui(mersenne.get(), mersenne.get(), 2);
    CHECK_FALSE(detail::is_probable_prime_fixed(mersenne));
}

TEST_CASE("amplification is a pure function of key and seed", "[privacy]") {
    const auto key = random_key(3'000, 7);
    const auto a = privacy_amplify(key, 1'200, 99);
    const auto b = privacy_amplify(key, 1'200, 99);
    CHECK(a.bits == b.bits);
    CHECK(a.bits.size() == 1'200);
    CHECK(a.stage == KeyStage::secure);
    CHECK(privacy_amplify(key, 1'200, 100).bits != a.bits);

    auto tweaked = key;
    tweaked.bits[1'500] ^= 1;
    CHECK(privacy_amplify(tweaked, 1'200, 99).bits != a.bits);
}

TEST_CASE("amplification block accounting", "[privacy]") {
    // Single block: exact bit count requested.
    CHECK(privacy_amplify(random_key(4'096, 1), 2'000, 5).bits.size() == 2'000);
    // Multi-block keys keep floor(out*block/len) per block; the flooring may
    // shave a bit or two off the total.
    const auto out = privacy_amplify(random_key(10'000, 2), 4'000, 5);
    CHECK(out.bits.size() == 3'999);
    CHECK(privacy_amplify(random_key(500, 3), 0, 5).bits.empty());
    CHECK_THROWS_AS(privacy_amplify(random_key(100, 4), 101, 5), ConfigError);
}

TEST_CASE("amplified output has no gross bias", "[privacy]") {
    const auto out = privacy_amplify(random_key(65'536, 11), 50'000, 321);
    std::size_t ones = 0;
    for (const auto b : out.bits) ones += b;
    const double p1 = static_cast<double>(ones) / static_cast<double>(out.bits.size());
    CHECK(p1 == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("verification digest is deterministic and sized by rounds", "[privacy]") {
    const auto key = random_key(2'048, 21);
    const auto d1 = verification_digest(key, 64, 1234);
    CHECK(d1 == verification_digest(key, 64, 1234));
    CHECK(d1.size() == 8);
    CHECK(d1 != verification_digest(key, 64, 1235));
    CHECK(verification_digest(key, 16, 1234).size() == 2);
    CHECK(verification_digest(key, 256, 1234).size() == 32);
    CHECK_THROWS_AS(verification_digest(key, 15, 1), ConfigError);
    CHECK_THROWS_AS(verification_digest(key, 257, 1), ConfigError);
    CHECK_THROWS_AS(verification_digest(KeyBuffer{}, 64, 1), ConfigError);
}

TEST_CASE("key verification catches a single flipped bit", "[privacy]") {
    const auto key = random_key(3'000, 31);
    auto other = key;
    CHECK(verify_keys(key, other, 64, 777));
    CHECK(verify_keys(key, other, 777));  // default round count
    other.bits[1'234] ^= 1;
    CHECK_FALSE(verify_keys(key, other, 64, 777));
    CHECK_FALSE(verify_keys(key, other, 16, 777));
}

TEST_CASE("universal hash respects the affine form", "[privacy]") {
    HashParams params;
    params.p = Mpz(13ul);
    params.m = Mpz(5ul);
    params.n = Mpz(7ul);
    CHECK(universal_hash(Mpz(4ul), params).to_ulong() == (5 * 4 + 7) % 13);
    CHECK(universal_hash(Mpz(0ul), params).to_ulong() == 7);
    CHECK(universal_hash(Mpz(12ul), params).to_ulong() == (5 * 12 + 7) % 13);
}
