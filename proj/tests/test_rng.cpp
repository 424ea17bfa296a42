#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "qkd/rng.hpp"

using namespace qkd;

TEST_CASE("rng streams are deterministic and independent", "[rng]") {
    Rng a(12345), b(12345);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng f1 = Rng(7).fork(1);
    Rng f2 = Rng(7).fork(2);
    CHECK(f1.next_u64() != f2.next_u64());
    CHECK(Rng(7).fork(1).next_u64() == Rng(7).fork(1).next_u64());
}

TEST_CASE("mix_seed separates streams and tags", "[rng]") {
    CHECK(mix_seed(1, 2, 3) == mix_seed(1, 2, 3));
    CHECK(mix_seed(1, 2, 3) != mix_seed(1, 2, 4));
    CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 3));
    CHECK(mix_seed(1, 2, 3) != mix_seed(2, 2, 3));
    CHECK(mix_seed(0, 0) != 0);
}

TEST_CASE("uniform lies in [0,1) with the right mean", "[rng]") {
    Rng rng(99);
    double sum = 0.0;
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / n == Catch::Approx(0.5).margin(3.0 / std::sqrt(12.0 * n)));
}

TEST_CASE("below is unbiased over small ranges", "[rng]") {
    Rng rng(5);
    std::vector<int> counts(7, 0);
    const int n = 70'000;
    for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
    for (int c : counts) CHECK(std::abs(c - n / 7) < 5 * std::sqrt(n / 7.0));
}

TEST_CASE("exponential and normal have the right moments", "[rng]") {
    Rng rng(321);
    const int n = 200'000;
    double esum = 0.0;
    for (int i = 0; i < n; ++i) esum += rng.exponential(2.0);
    CHECK(esum / n == Catch::Approx(0.5).margin(3 * 0.5 / std::sqrt(double(n))));

    double nsum = 0.0, nsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal(3.0);
        nsum += x;
        nsq += x * x;
    }
    CHECK(nsum / n == Catch::Approx(0.0).margin(3 * 3.0 / std::sqrt(double(n))));
    CHECK(std::sqrt(nsq / n) == Catch::Approx(3.0).epsilon(0.02));
}
